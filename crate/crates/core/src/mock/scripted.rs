//! Canned replies for the text-completion and VLM ports.
//!
//! # Fixture grammar
//!
//! A fixture is plain text. Records are separated by lines containing only
//! `---`; blank lines and lines starting with `#` are ignored. Each record
//! holds an optional matcher and a required reply:
//!
//! ```text
//! # how to answer the position question
//! match: where to put
//! reply: left
//! ---
//! reply: 2
//! ```
//!
//! `match:` values are case-sensitive substrings tested against the incoming
//! query; a record without `match:` matches anything (pure ordered reply).
//! `reply:` takes the rest of the line, with `\n` escapes expanding to
//! newlines for multi-line replies.
//!
//! Before the first record, a header line `on-exhausted: error` (default) or
//! `on-exhausted: repeat-last` picks the exhaustion policy.
//!
//! # Matching semantics
//!
//! Each incoming query scans the records in file order and consumes the
//! first unused record whose matcher accepts it. When nothing matches, the
//! policy decides: `error` raises a scripted-exhaustion port error,
//! `repeat-last` repeats the most recently consumed reply (an error if
//! nothing was consumed yet).

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::latent::DecodedImage;
use crate::ports::{PortError, TextCompletionPort, VlmPort};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExhaustPolicy {
    #[default]
    Error,
    RepeatLast,
}

#[derive(Clone, Debug, PartialEq)]
struct Record {
    matcher: Option<String>,
    reply: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FixtureError {
    UnknownKey { line: usize, key: String },
    MissingReply { record: usize },
    DuplicateKey { line: usize, key: String },
    BadPolicy { line: usize, value: String },
}

impl fmt::Display for FixtureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixtureError::UnknownKey { line, key } => {
                write!(f, "line {line}: unknown key {key:?}")
            }
            FixtureError::MissingReply { record } => {
                write!(f, "record {record} has no reply line")
            }
            FixtureError::DuplicateKey { line, key } => {
                write!(f, "line {line}: duplicate {key:?} in one record")
            }
            FixtureError::BadPolicy { line, value } => {
                write!(f, "line {line}: unknown exhaustion policy {value:?}")
            }
        }
    }
}

impl core::error::Error for FixtureError {}

/// A consumable scripted reply set, usable as both a text-completion port
/// and a VLM port (the image argument is ignored).
#[derive(Clone, Debug)]
pub struct ScriptedReplies {
    records: Vec<Record>,
    used: Vec<bool>,
    policy: ExhaustPolicy,
    last_consumed: Option<usize>,
    calls: u32,
}

impl ScriptedReplies {
    /// Parse the fixture grammar described in the module docs.
    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut policy = ExhaustPolicy::default();
        let mut records = Vec::new();
        let mut matcher: Option<String> = None;
        let mut reply: Option<String> = None;
        let mut record_open = false;
        let mut record_index = 0usize;

        let close =
            |matcher: &mut Option<String>, reply: &mut Option<String>, record_open: &mut bool,
             records: &mut Vec<Record>, record_index: &mut usize|
             -> Result<(), FixtureError> {
                if *record_open {
                    let r = reply.take().ok_or(FixtureError::MissingReply {
                        record: *record_index,
                    })?;
                    records.push(Record {
                        matcher: matcher.take(),
                        reply: r,
                    });
                    *record_open = false;
                    *record_index += 1;
                }
                Ok(())
            };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            let trimmed = line.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if trimmed == "---" {
                close(&mut matcher, &mut reply, &mut record_open, &mut records, &mut record_index)?;
                continue;
            }
            let lineno = lineno + 1;
            if let Some(value) = trimmed.strip_prefix("on-exhausted:") {
                if record_open || !records.is_empty() {
                    return Err(FixtureError::UnknownKey {
                        line: lineno,
                        key: "on-exhausted (must precede all records)".to_string(),
                    });
                }
                policy = match value.trim() {
                    "error" => ExhaustPolicy::Error,
                    "repeat-last" => ExhaustPolicy::RepeatLast,
                    other => {
                        return Err(FixtureError::BadPolicy {
                            line: lineno,
                            value: other.to_string(),
                        })
                    }
                };
                continue;
            }
            if let Some(value) = trimmed.strip_prefix("match:") {
                if matcher.is_some() {
                    return Err(FixtureError::DuplicateKey {
                        line: lineno,
                        key: "match".to_string(),
                    });
                }
                matcher = Some(value.trim().to_string());
                record_open = true;
            } else if let Some(value) = trimmed.strip_prefix("reply:") {
                if reply.is_some() {
                    return Err(FixtureError::DuplicateKey {
                        line: lineno,
                        key: "reply".to_string(),
                    });
                }
                reply = Some(value.trim().replace("\\n", "\n"));
                record_open = true;
            } else {
                return Err(FixtureError::UnknownKey {
                    line: lineno,
                    key: trimmed.chars().take(24).collect(),
                });
            }
        }
        close(&mut matcher, &mut reply, &mut record_open, &mut records, &mut record_index)?;

        let used = alloc::vec![false; records.len()];
        Ok(ScriptedReplies {
            records,
            used,
            policy,
            last_consumed: None,
            calls: 0,
        })
    }

    /// Purely ordered reply set (no matchers, error on exhaustion); the
    /// convenient form for tests.
    pub fn from_replies<S: AsRef<str>>(replies: impl IntoIterator<Item = S>) -> Self {
        let records: Vec<Record> = replies
            .into_iter()
            .map(|r| Record {
                matcher: None,
                reply: r.as_ref().to_string(),
            })
            .collect();
        let used = alloc::vec![false; records.len()];
        ScriptedReplies {
            records,
            used,
            policy: ExhaustPolicy::Error,
            last_consumed: None,
            calls: 0,
        }
    }

    pub fn with_policy(mut self, policy: ExhaustPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Total queries answered or attempted so far.
    pub fn calls(&self) -> u32 {
        self.calls
    }

    /// Records not yet consumed.
    pub fn remaining(&self) -> usize {
        self.used.iter().filter(|&&u| !u).count()
    }

    fn reply_to(&mut self, query: &str) -> Result<String, PortError> {
        self.calls += 1;
        for (i, record) in self.records.iter().enumerate() {
            if self.used[i] {
                continue;
            }
            let hit = match &record.matcher {
                None => true,
                Some(m) => query.contains(m.as_str()),
            };
            if hit {
                self.used[i] = true;
                self.last_consumed = Some(i);
                return Ok(record.reply.clone());
            }
        }
        match (self.policy, self.last_consumed) {
            (ExhaustPolicy::RepeatLast, Some(i)) => Ok(self.records[i].reply.clone()),
            _ => Err(PortError::Exhausted {
                query: query.to_string(),
            }),
        }
    }
}

impl TextCompletionPort for ScriptedReplies {
    fn complete(&mut self, prompt: &str) -> Result<String, PortError> {
        self.reply_to(prompt)
    }
}

impl VlmPort for ScriptedReplies {
    fn ask(&mut self, _image: &DecodedImage, question: &str) -> Result<String, PortError> {
        self.reply_to(question)
    }
}
