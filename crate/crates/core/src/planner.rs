//! Prompt decomposition and per-object layout planning.
//!
//! A [`Planner`] wraps a text-completion port for the duration of one run,
//! asks it fixed-template questions (the templates live under `resources/`
//! and are filled verbatim), parses the free-form replies, and records every
//! exchange in an append-only transcript that ends up in the run manifest.
//!
//! The question flow per run:
//!
//! 1. [`Planner::decompose`]: list the objects in painting order.
//! 2. [`Planner::plan_first`]: where does object 1 sit (left/bottom after
//!    projection) and how many objects share that axis?
//! 3. [`Planner::plan_next`] per later object: position relative to the
//!    previous object (right/top after projection) plus a count.
//! 4. [`Planner::judge_overlap`] per later object: should its region bite
//!    into the previous object's box?
//!
//! Replies that fail to parse are retried up to three times with a short
//! clarification suffix appended; what happens after the retries run out
//! depends on the decision (see each method).

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::PositionChoice;
use crate::ports::{PortError, TextCompletionPort};

const DECOMPOSE: &str = include_str!("../resources/decompose.txt");
const FIRST_POSITION: &str = include_str!("../resources/first_position.txt");
const FIRST_COUNT_HORIZONTAL: &str = include_str!("../resources/first_count_horizontal.txt");
const FIRST_COUNT_VERTICAL: &str = include_str!("../resources/first_count_vertical.txt");
const NEXT_POSITION: &str = include_str!("../resources/next_position.txt");
const NEXT_COUNT: &str = include_str!("../resources/next_count.txt");
const OVERLAP: &str = include_str!("../resources/overlap.txt");

/// Clarification retries per decision (in addition to the initial query).
const RETRIES: u32 = 3;

/// Counts are clamped into this range before reaching geometry.
const COUNT_RANGE: (u32, u32) = (1, 6);

#[derive(Clone, Debug, PartialEq)]
pub enum PlannerError {
    /// The object list could not be parsed after all retries.
    Decomposition { last_reply: String },
    /// A position reply stayed unusable ("none of above" included) after all
    /// retries. The orchestrator resolves this by defaulting the position
    /// and logging the override.
    Position { last_reply: String },
    /// A count reply stayed non-numeric after all retries.
    Count { last_reply: String },
    Port(PortError),
}

impl fmt::Display for PlannerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlannerError::Decomposition { last_reply } => {
                write!(f, "could not parse object list from reply {last_reply:?}")
            }
            PlannerError::Position { last_reply } => {
                write!(f, "could not parse a position from reply {last_reply:?}")
            }
            PlannerError::Count { last_reply } => {
                write!(f, "could not parse a count from reply {last_reply:?}")
            }
            PlannerError::Port(e) => write!(f, "planner port failed: {e}"),
        }
    }
}

impl core::error::Error for PlannerError {}

impl From<PortError> for PlannerError {
    fn from(e: PortError) -> Self {
        PlannerError::Port(e)
    }
}

/// One question/answer exchange with the planning model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub reply: String,
}

/// Append-only record of every planning exchange in a run, retries included.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerTranscript {
    entries: Vec<Exchange>,
}

impl PlannerTranscript {
    pub fn entries(&self) -> &[Exchange] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Overlap verdict for one object against its predecessor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapJudgement {
    pub overlapping: bool,
    /// The reply never parsed as yes/no; `overlapping` defaulted to false.
    pub ambiguous: bool,
}

/// Single-run planning state machine: owns the transcript, borrows the port.
pub struct Planner<'p> {
    port: &'p mut dyn TextCompletionPort,
    transcript: PlannerTranscript,
}

impl<'p> Planner<'p> {
    pub fn new(port: &'p mut dyn TextCompletionPort) -> Self {
        Planner {
            port,
            transcript: PlannerTranscript::default(),
        }
    }

    pub fn transcript(&self) -> &PlannerTranscript {
        &self.transcript
    }

    pub fn into_transcript(self) -> PlannerTranscript {
        self.transcript
    }

    fn exchange(&mut self, prompt: &str) -> Result<String, PlannerError> {
        let reply = self.port.complete(prompt)?;
        self.transcript.entries.push(Exchange {
            prompt: prompt.to_owned(),
            reply: reply.clone(),
        });
        Ok(reply)
    }

    /// Query, then retry with `suffix` appended while `parse` keeps failing.
    /// Returns the parsed value or the last raw reply.
    fn ask_parsed<T>(
        &mut self,
        prompt: &str,
        suffix: &str,
        mut parse: impl FnMut(&str) -> Option<T>,
    ) -> Result<Result<T, String>, PlannerError> {
        let mut reply = self.exchange(prompt)?;
        if let Some(v) = parse(&reply) {
            return Ok(Ok(v));
        }
        let clarified = format!("{prompt} {suffix}");
        for _ in 0..RETRIES {
            reply = self.exchange(&clarified)?;
            if let Some(v) = parse(&reply) {
                return Ok(Ok(v));
            }
        }
        Ok(Err(reply))
    }

    /// Split the prompt into objects in painting order.
    pub fn decompose(&mut self, prompt: &str) -> Result<Vec<String>, PlannerError> {
        let q = DECOMPOSE.replace("{description}", prompt);
        match self.ask_parsed(&q, "List only the objects, one per line.", parse_object_list)? {
            Ok(objects) => Ok(objects),
            Err(last_reply) => Err(PlannerError::Decomposition { last_reply }),
        }
    }

    /// Position and same-axis count for the first object.
    ///
    /// The raw reply may name any side; it is projected onto the anchored
    /// subset: left/right become `Left`, top/bottom become `Bottom`. The
    /// count question then follows the projected axis (horizontal for
    /// `Left`, vertical for `Bottom`) and is clamped into `[1, 6]`.
    pub fn plan_first(
        &mut self,
        prompt: &str,
        object: &str,
    ) -> Result<(PositionChoice, u32), PlannerError> {
        let q = FIRST_POSITION
            .replace("{description}", prompt)
            .replace("{object}", object);
        let raw = match self.ask_parsed(&q, "Answer with a single word.", parse_position_word)? {
            Ok(w) => w,
            Err(last_reply) => return Err(PlannerError::Position { last_reply }),
        };
        let opt = match raw {
            RawPosition::Left | RawPosition::Right => PositionChoice::Left,
            RawPosition::Top | RawPosition::Above | RawPosition::Bottom => PositionChoice::Bottom,
            RawPosition::NoneOfAbove => {
                return Err(PlannerError::Position {
                    last_reply: String::from("none of above"),
                })
            }
        };
        let count_template = match opt {
            PositionChoice::Left => FIRST_COUNT_HORIZONTAL,
            _ => FIRST_COUNT_VERTICAL,
        };
        let cq = count_template.replace("{description}", prompt);
        let num = match self.ask_parsed(&cq, "Answer with a single number.", parse_count)? {
            Ok(n) => n,
            Err(last_reply) => return Err(PlannerError::Count { last_reply }),
        };
        Ok((opt, num.clamp(COUNT_RANGE.0, COUNT_RANGE.1)))
    }

    /// Position relative to the previous object and stacking count for
    /// object `n > 1`.
    ///
    /// Replies project onto the stacking subset: left/right become `Right`,
    /// above/top/bottom become `Top`. "None of above" (or an unparseable
    /// reply) after retries is a [`PlannerError::Position`]; the
    /// orchestrator defaults to `Right` and records the override, then asks
    /// the count via [`Planner::plan_next_count`].
    pub fn plan_next(
        &mut self,
        prompt: &str,
        placed: &[String],
        object: &str,
    ) -> Result<(PositionChoice, u32), PlannerError> {
        let previous = placed.last().map(String::as_str).unwrap_or_default();
        let q = NEXT_POSITION
            .replace("{description}", prompt)
            .replace("{objects}", &join_objects(placed))
            .replace("{object}", object)
            .replace("{previous}", previous);
        let raw = match self.ask_parsed(&q, "Answer with a single word.", parse_position_word)? {
            Ok(RawPosition::NoneOfAbove) => {
                // A parsed "none of above" is still unusable; give the model
                // one clarified chance before surfacing the error.
                let clarified = format!("{q} Answer with a single word.");
                let r = self.exchange(&clarified)?;
                match parse_position_word(&r) {
                    Some(RawPosition::NoneOfAbove) | None => {
                        return Err(PlannerError::Position { last_reply: r })
                    }
                    Some(other) => other,
                }
            }
            Ok(w) => w,
            Err(last_reply) => return Err(PlannerError::Position { last_reply }),
        };
        let opt = match raw {
            RawPosition::Left | RawPosition::Right => PositionChoice::Right,
            RawPosition::Above | RawPosition::Top | RawPosition::Bottom => PositionChoice::Top,
            RawPosition::NoneOfAbove => unreachable!("handled above"),
        };
        let num = self.plan_next_count(prompt, placed, opt)?;
        Ok((opt, num))
    }

    /// The count leg of [`Planner::plan_next`], exposed separately so the
    /// orchestrator can still ask it after defaulting a failed position.
    pub fn plan_next_count(
        &mut self,
        prompt: &str,
        placed: &[String],
        opt: PositionChoice,
    ) -> Result<u32, PlannerError> {
        let previous = placed.last().map(String::as_str).unwrap_or_default();
        let cq = NEXT_COUNT
            .replace("{description}", prompt)
            .replace("{objects}", &join_objects(placed))
            .replace("{position}", opt.word())
            .replace("{previous}", previous);
        match self.ask_parsed(&cq, "Answer with a single number.", parse_count)? {
            Ok(n) => Ok(n.clamp(COUNT_RANGE.0, COUNT_RANGE.1)),
            Err(last_reply) => Err(PlannerError::Count { last_reply }),
        }
    }

    /// Should `object`'s region overlap the previous object's box?
    ///
    /// Never fails on parsing: a reply that stays ambiguous after retries
    /// counts as "no overlap" with the `ambiguous` flag set.
    pub fn judge_overlap(
        &mut self,
        prompt: &str,
        placed: &[String],
        object: &str,
    ) -> Result<OverlapJudgement, PlannerError> {
        let previous = placed.last().map(String::as_str).unwrap_or_default();
        let q = OVERLAP
            .replace("{description}", prompt)
            .replace("{objects}", &join_objects(placed))
            .replace("{object}", object)
            .replace("{previous}", previous);
        match self.ask_parsed(&q, "Answer with a single word.", parse_yes_no)? {
            Ok(yes) => Ok(OverlapJudgement {
                overlapping: yes,
                ambiguous: false,
            }),
            Err(_) => Ok(OverlapJudgement {
                overlapping: false,
                ambiguous: true,
            }),
        }
    }
}

/// Sub-prompt for stage `n` (1-based): the object itself for the first
/// stage, "{object} and {previous}" afterwards so the text keeps one
/// already-painted anchor.
pub fn make_subprompt(objects: &[String], n: usize) -> Option<String> {
    if n == 0 || n > objects.len() {
        return None;
    }
    if n == 1 {
        Some(objects[0].clone())
    } else {
        Some(format!("{} and {}", objects[n - 1], objects[n - 2]))
    }
}

/// Whitespace-token index of the object's head noun inside the stage
/// sub-prompt. The object phrase leads the sub-prompt, so its last word is
/// at index `word_count - 1`.
pub fn head_token_index(object: &str) -> u32 {
    (object.split_whitespace().count().max(1) - 1) as u32
}

/// Head noun of an object phrase: its last word, with leading articles
/// stripped first ("the black door" -> "door").
pub fn head_noun(object: &str) -> &str {
    content_words(object).last().copied().unwrap_or(object)
}

/// Descriptive words of an object phrase: everything except articles and
/// the head noun ("the black door" -> ["black"]).
pub fn attribute_words(object: &str) -> Vec<&str> {
    let words = content_words(object);
    if words.len() <= 1 {
        Vec::new()
    } else {
        words[..words.len() - 1].to_vec()
    }
}

fn content_words(phrase: &str) -> Vec<&str> {
    phrase
        .split_whitespace()
        .filter(|w| !matches!(w.to_ascii_lowercase().as_str(), "a" | "an" | "the"))
        .collect()
}

fn join_objects(objects: &[String]) -> String {
    objects.join(", ")
}

// ── Reply parsing ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawPosition {
    Left,
    Right,
    Top,
    Above,
    Bottom,
    NoneOfAbove,
}

fn clean_token(tok: &str) -> String {
    tok.trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase()
}

/// First recognizable side named in a reply; "none of above" wins only when
/// no side is named.
pub fn parse_position_word(reply: &str) -> Option<RawPosition> {
    // "none of above" contains a direction word, so "none" has to win over
    // anything else in the reply.
    let mut first: Option<RawPosition> = None;
    for tok in reply.split_whitespace() {
        let dir = match clean_token(tok).as_str() {
            "left" => RawPosition::Left,
            "right" => RawPosition::Right,
            "top" => RawPosition::Top,
            "above" => RawPosition::Above,
            "bottom" | "below" | "down" => RawPosition::Bottom,
            "none" => return Some(RawPosition::NoneOfAbove),
            _ => continue,
        };
        first.get_or_insert(dir);
    }
    first
}

/// First integer named in a reply, as digits or a number word up to twelve.
pub fn parse_count(reply: &str) -> Option<u32> {
    for tok in reply.split_whitespace() {
        let cleaned = clean_token(tok);
        if !cleaned.is_empty() && cleaned.chars().all(|c| c.is_ascii_digit()) {
            if let Ok(n) = cleaned.parse::<u32>() {
                return Some(n);
            }
        }
        let word = match cleaned.as_str() {
            "one" | "single" => 1,
            "two" => 2,
            "three" => 3,
            "four" => 4,
            "five" => 5,
            "six" => 6,
            "seven" => 7,
            "eight" => 8,
            "nine" => 9,
            "ten" => 10,
            "eleven" => 11,
            "twelve" => 12,
            _ => 0,
        };
        if word > 0 {
            return Some(word);
        }
    }
    None
}

/// Yes/no as the first matching token; `None` when neither appears.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    for tok in reply.split_whitespace() {
        match clean_token(tok).as_str() {
            "yes" => return Some(true),
            "no" => return Some(false),
            _ => {}
        }
    }
    None
}

/// Parse a decomposition reply into object phrases.
///
/// Grammar, в order: (1) enumerated or bulleted lines ("1. x", "- x") keep
/// only the enumerated items; (2) two or more plain lines are items
/// themselves; (3) a single line splits on commas and " and "; (4) a lone
/// short phrase (at most 8 words, no sentence punctuation) is one object.
/// Items are trimmed, leading articles dropped, and trailing periods
/// removed; an empty result is a parse failure.
pub fn parse_object_list(reply: &str) -> Option<Vec<String>> {
    let lines: Vec<&str> = reply
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return None;
    }

    let enumerated: Vec<String> = lines
        .iter()
        .filter_map(|l| strip_enumeration(l))
        .collect();
    let raw_items: Vec<String> = if !enumerated.is_empty() {
        enumerated
    } else if lines.len() >= 2 {
        lines.iter().map(|l| (*l).to_string()).collect()
    } else {
        let line = lines[0];
        if line.contains(',') || line.contains(" and ") {
            line.replace(" and ", ",")
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        } else {
            if line.split_whitespace().count() > 8
                || line.contains(['!', '?', ':', ';'])
            {
                return None;
            }
            alloc::vec![line.to_string()]
        }
    };

    let items: Vec<String> = raw_items
        .iter()
        .map(|item| clean_object_phrase(item))
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() || items.iter().any(|i| i.split_whitespace().count() > 8) {
        None
    } else {
        Some(items)
    }
}

fn strip_enumeration(line: &str) -> Option<String> {
    let trimmed = line.trim_start();
    if let Some(rest) = trimmed
        .strip_prefix('-')
        .or_else(|| trimmed.strip_prefix('*'))
        .or_else(|| trimmed.strip_prefix('•'))
    {
        return Some(clean_object_phrase(rest));
    }
    let digits: String = trimmed.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    let after_digits = &trimmed[digits.len()..];
    let rest = after_digits.strip_prefix(['.', ')', ':']).unwrap_or(after_digits);
    let had_marker = rest.len() != after_digits.len() || after_digits.starts_with(' ');
    if had_marker && !rest.trim().is_empty() {
        Some(clean_object_phrase(rest))
    } else {
        None
    }
}

fn clean_object_phrase(raw: &str) -> String {
    let mut s = raw.trim().trim_end_matches('.').trim().to_string();
    for article in ["a ", "an ", "the ", "A ", "An ", "The "] {
        if let Some(rest) = s.strip_prefix(article) {
            s = rest.to_string();
            break;
        }
    }
    s
}
