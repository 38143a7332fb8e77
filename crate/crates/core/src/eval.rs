//! Yes/no questionnaire evaluation of generated images.
//!
//! For each prompt, a questionnaire is expanded from templates across three
//! aspects: object completeness (is each object present), attribute binding
//! (does each attribute hold of its object), and spatial relations (does each
//! stated relation hold). A judge port answers every question and the
//! harness aggregates per-aspect yes-rates plus a pooled overall rate. An
//! aspect with no questions is reported as not applicable and excluded from
//! the overall denominator.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::latent::DecodedImage;
use crate::planner::{attribute_words, head_noun, parse_yes_no};
use crate::ports::VlmPort;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Completeness,
    Attribute,
    Spatial,
}

impl core::fmt::Display for Aspect {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Aspect::Completeness => "completeness",
            Aspect::Attribute => "attribute",
            Aspect::Spatial => "spatial",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub aspect: Aspect,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub prompt: String,
    pub questions: Vec<EvalQuestion>,
}

impl Questionnaire {
    pub fn count(&self, aspect: Aspect) -> usize {
        self.questions.iter().filter(|q| q.aspect == aspect).count()
    }
}

/// Relation wordings recognized in prompts, longest first so a longer
/// phrase wins over a contained shorter one at the same spot.
const RELATION_PHRASES: &[&str] = &[
    "on the right side of",
    "on the left side of",
    "on the bottom of",
    "to the right of",
    "to the left of",
    "on the right of",
    "on the left of",
    "underneath",
    "on top of",
    "beneath",
    "above",
    "below",
    "under",
];

fn word_bounded(text: &str, start: usize, end: usize) -> bool {
    let before_ok = start == 0
        || !text[..start]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric());
    let after_ok = end == text.len()
        || !text[end..].chars().next().is_some_and(|c| c.is_alphanumeric());
    before_ok && after_ok
}

fn find_all(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(needle) {
        let start = from + rel;
        let end = start + needle.len();
        if word_bounded(haystack, start, end) {
            out.push((start, end));
        }
        from = start + 1;
    }
    out
}

/// Stated relations in the prompt: non-overlapping `(start, end, phrase)`
/// spans in text order.
fn find_relations(lower: &str) -> Vec<(usize, usize, &'static str)> {
    let mut hits: Vec<(usize, usize, &'static str)> = Vec::new();
    for &phrase in RELATION_PHRASES {
        for (start, end) in find_all(lower, phrase) {
            hits.push((start, end, phrase));
        }
    }
    hits.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut kept: Vec<(usize, usize, &'static str)> = Vec::new();
    for h in hits {
        if kept.last().map_or(true, |k| h.0 >= k.1) {
            kept.push(h);
        }
    }
    kept
}

/// Expands the questionnaire for one prompt given its object list: one
/// presence question per object, one binding question per attribute word,
/// and one spatial question per relation stated in the prompt whose subject
/// and reference objects can both be located in the text.
pub fn build_questionnaire(prompt: &str, objects: &[String]) -> Questionnaire {
    let mut questions = Vec::new();
    for object in objects {
        let head = head_noun(object);
        questions.push(EvalQuestion {
            aspect: Aspect::Completeness,
            text: format!("Is there a {head} in the image?"),
        });
        for attr in attribute_words(object) {
            questions.push(EvalQuestion {
                aspect: Aspect::Attribute,
                text: format!("Is the {head} {attr}?"),
            });
        }
    }
    let lower = prompt.to_lowercase();
    let heads: Vec<String> = objects
        .iter()
        .map(|o| head_noun(o).to_lowercase())
        .collect();
    for (start, end, phrase) in find_relations(&lower) {
        // Subject: the head ending closest before the phrase. Reference:
        // the head starting closest after it.
        let mut subject: Option<(usize, &str)> = None;
        let mut reference: Option<(usize, &str)> = None;
        for head in &heads {
            for (hs, he) in find_all(&lower, head) {
                if he <= start && subject.map_or(true, |(e, _)| he > e) {
                    subject = Some((he, head));
                }
                if hs >= end && reference.map_or(true, |(s, _)| hs < s) {
                    reference = Some((hs, head));
                }
            }
        }
        if let (Some((_, subj)), Some((_, rf))) = (subject, reference) {
            questions.push(EvalQuestion {
                aspect: Aspect::Spatial,
                text: format!("Is the {subj} {phrase} the {rf}?"),
            });
        }
    }
    Questionnaire {
        prompt: prompt.to_string(),
        questions,
    }
}

/// Yes/total tally of one aspect.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectCount {
    pub yes: u32,
    pub total: u32,
}

impl AspectCount {
    /// Yes-rate as a percentage; `None` when no questions were asked.
    pub fn percentage(&self) -> Option<f64> {
        if self.total == 0 {
            None
        } else {
            Some(100.0 * self.yes as f64 / self.total as f64)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectScores {
    pub completeness: AspectCount,
    pub attribute: AspectCount,
    pub spatial: AspectCount,
}

impl AspectScores {
    pub fn tally(&mut self, aspect: Aspect, yes: bool) {
        let slot = match aspect {
            Aspect::Completeness => &mut self.completeness,
            Aspect::Attribute => &mut self.attribute,
            Aspect::Spatial => &mut self.spatial,
        };
        slot.total += 1;
        if yes {
            slot.yes += 1;
        }
    }

    pub fn get(&self, aspect: Aspect) -> AspectCount {
        match aspect {
            Aspect::Completeness => self.completeness,
            Aspect::Attribute => self.attribute,
            Aspect::Spatial => self.spatial,
        }
    }

    /// All answered questions pooled; empty aspects contribute nothing.
    pub fn pooled(&self) -> AspectCount {
        AspectCount {
            yes: self.completeness.yes + self.attribute.yes + self.spatial.yes,
            total: self.completeness.total + self.attribute.total + self.spatial.total,
        }
    }

    pub fn overall(&self) -> Option<f64> {
        self.pooled().percentage()
    }
}

/// One judged question and its raw answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgedQuestion {
    pub aspect: Aspect,
    pub question: String,
    pub answer: String,
    pub yes: bool,
    /// The answer failed to parse (or the judge errored) and counted as no.
    pub flagged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub scores: AspectScores,
    /// Raw judged answers, one list per evaluated image in input order.
    pub answers: Vec<Vec<JudgedQuestion>>,
}

/// Judges every questionnaire against its image and aggregates the tallies.
/// A judge failure on a question counts as no and is flagged; evaluation
/// itself never fails.
pub fn evaluate(
    entries: &[(&DecodedImage, &Questionnaire)],
    judge: &mut dyn VlmPort,
) -> EvalOutcome {
    let mut outcome = EvalOutcome::default();
    for (image, questionnaire) in entries {
        let mut judged = Vec::with_capacity(questionnaire.questions.len());
        for q in &questionnaire.questions {
            let (answer, yes, flagged) = match judge.ask(image, &q.text) {
                Ok(reply) => match parse_yes_no(&reply) {
                    Some(v) => (reply, v, false),
                    None => (reply, false, true),
                },
                Err(e) => (format!("(judge error: {e})"), false, true),
            };
            outcome.scores.tally(q.aspect, yes);
            judged.push(JudgedQuestion {
                aspect: q.aspect,
                question: q.text.clone(),
                answer,
                yes,
                flagged,
            });
        }
        outcome.answers.push(judged);
    }
    outcome
}
