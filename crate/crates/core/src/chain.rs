//! Five-segment degradation-aware reasoning chains.
//!
//! Wire format (segments in this order, `ANSWER` optional):
//!
//! ```text
//! <TYPE>lens_blur: 0.25
//! noise: 0.80<TYPE_END><INFLUENCE>...<INFLUENCE_END><REASONING>...<REASONING_END><CONCLUSION>...<CONCLUSION_END><ANSWER>...<ANSWER_END>
//! ```
//!
//! The parser ignores text outside segments, so chat preambles and trailing
//! chatter do not break it. Only the `TYPE` body is interpreted: one
//! `name: intensity` entry per line.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::degradation::{round2, DegradationSpec, DegradationType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Segment {
    Type,
    Influence,
    Reasoning,
    Conclusion,
    Answer,
}

impl Segment {
    pub const ALL: [Segment; 5] = [
        Segment::Type,
        Segment::Influence,
        Segment::Reasoning,
        Segment::Conclusion,
        Segment::Answer,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Segment::Type => "TYPE",
            Segment::Influence => "INFLUENCE",
            Segment::Reasoning => "REASONING",
            Segment::Conclusion => "CONCLUSION",
            Segment::Answer => "ANSWER",
        }
    }

    pub fn open_token(self) -> &'static str {
        match self {
            Segment::Type => "<TYPE>",
            Segment::Influence => "<INFLUENCE>",
            Segment::Reasoning => "<REASONING>",
            Segment::Conclusion => "<CONCLUSION>",
            Segment::Answer => "<ANSWER>",
        }
    }

    pub fn close_token(self) -> &'static str {
        match self {
            Segment::Type => "<TYPE_END>",
            Segment::Influence => "<INFLUENCE_END>",
            Segment::Reasoning => "<REASONING_END>",
            Segment::Conclusion => "<CONCLUSION_END>",
            Segment::Answer => "<ANSWER_END>",
        }
    }

    fn rank(self) -> usize {
        self as usize
    }

    fn required(self) -> bool {
        self != Segment::Answer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChainErrorKind {
    MissingSegment,
    OutOfOrder,
    UnterminatedSegment,
    DuplicateSegment,
    MalformedTypeEntry,
    IntensityOutOfRange,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at byte {position}: {detail}")]
pub struct ChainParseError {
    pub kind: ChainErrorKind,
    /// Byte offset into the input, at most the input length.
    pub position: usize,
    pub detail: String,
}

impl ChainParseError {
    fn new(kind: ChainErrorKind, position: usize, detail: impl Into<String>) -> Self {
        Self {
            kind,
            position,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReasoningChain {
    pub degradations: Vec<DegradationSpec>,
    pub influence: String,
    pub reasoning: String,
    pub conclusion: String,
    pub answer: Option<String>,
}

impl ReasoningChain {
    /// Checks what serialization needs for a lossless round trip: a
    /// non-empty TYPE list and conclusion, trimmed text, no embedded tokens.
    pub fn validate(&self) -> Result<(), String> {
        if self.degradations.is_empty() {
            return Err("chain has no degradations".into());
        }
        if self.conclusion.trim().is_empty() {
            return Err("conclusion is empty".into());
        }
        let texts = [
            ("influence", Some(&self.influence)),
            ("reasoning", Some(&self.reasoning)),
            ("conclusion", Some(&self.conclusion)),
            ("answer", self.answer.as_ref()),
        ];
        for (name, text) in texts {
            let Some(text) = text else { continue };
            if text.trim() != text {
                return Err(format!("{name} has surrounding whitespace"));
            }
            if contains_token(text) {
                return Err(format!("{name} contains a segment token"));
            }
        }
        if matches!(&self.answer, Some(a) if a.is_empty()) {
            return Err("answer is present but empty".into());
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("chain serializes")
    }
}

impl fmt::Display for ReasoningChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_chain(self))
    }
}

/// True when `text` contains any of the ten segment tokens.
pub fn contains_token(text: &str) -> bool {
    Segment::ALL
        .iter()
        .any(|s| text.contains(s.open_token()) || text.contains(s.close_token()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    Open(Segment),
    Close(Segment),
}

impl Token {
    fn text(self) -> &'static str {
        match self {
            Token::Open(s) => s.open_token(),
            Token::Close(s) => s.close_token(),
        }
    }
}

fn scan_tokens(text: &str) -> impl Iterator<Item = (usize, Token)> + '_ {
    text.match_indices('<').filter_map(move |(pos, _)| {
        let rest = &text[pos..];
        Segment::ALL.iter().find_map(|&seg| {
            if rest.starts_with(seg.open_token()) {
                Some((pos, Token::Open(seg)))
            } else if rest.starts_with(seg.close_token()) {
                Some((pos, Token::Close(seg)))
            } else {
                None
            }
        })
    })
}

/// Segment bodies located in the input, untrimmed, with their byte offsets.
#[derive(Debug, Clone, Default)]
struct RawSegments<'a> {
    bodies: [Option<(usize, &'a str)>; 5],
}

fn split_segments(text: &str) -> Result<RawSegments<'_>, ChainParseError> {
    use ChainErrorKind::*;
    let mut raw = RawSegments::default();
    let mut open: Option<(Segment, usize, usize)> = None;
    let mut max_rank: Option<usize> = None;

    for (pos, tok) in scan_tokens(text) {
        match open {
            Some((seg, open_pos, body_start)) => {
                if tok == Token::Close(seg) {
                    raw.bodies[seg.rank()] = Some((body_start, &text[body_start..pos]));
                    open = None;
                } else {
                    return Err(ChainParseError::new(
                        UnterminatedSegment,
                        open_pos,
                        format!("{} is not closed before {}", seg.open_token(), tok.text()),
                    ));
                }
            }
            None => match tok {
                Token::Open(seg) => {
                    if raw.bodies[seg.rank()].is_some() {
                        return Err(ChainParseError::new(
                            DuplicateSegment,
                            pos,
                            format!("{} appears twice", seg.label()),
                        ));
                    }
                    if let Some(m) = max_rank.filter(|&m| m > seg.rank()) {
                        return Err(ChainParseError::new(
                            OutOfOrder,
                            pos,
                            format!("{} after {}", seg.label(), Segment::ALL[m].label()),
                        ));
                    }
                    max_rank = Some(seg.rank());
                    open = Some((seg, pos, pos + seg.open_token().len()));
                }
                Token::Close(seg) => {
                    let (kind, detail) = if raw.bodies[seg.rank()].is_some() {
                        (DuplicateSegment, format!("second {}", seg.close_token()))
                    } else {
                        (OutOfOrder, format!("{} before {}", seg.close_token(), seg.open_token()))
                    };
                    return Err(ChainParseError::new(kind, pos, detail));
                }
            },
        }
    }

    if let Some((seg, open_pos, _)) = open {
        return Err(ChainParseError::new(
            UnterminatedSegment,
            open_pos,
            format!("{} never closed", seg.open_token()),
        ));
    }
    if let Some(seg) = Segment::ALL
        .iter()
        .find(|s| s.required() && raw.bodies[s.rank()].is_none())
    {
        return Err(ChainParseError::new(
            MissingSegment,
            text.len(),
            format!("{} segment missing", seg.label()),
        ));
    }
    Ok(raw)
}

/// Parses a `TYPE` body: one `name: intensity` entry per non-blank line.
/// `offset` is the body's byte offset in the full input, for error positions.
pub fn parse_type_body(body: &str, offset: usize) -> Result<Vec<DegradationSpec>, ChainParseError> {
    use ChainErrorKind::*;
    let mut specs = Vec::new();
    let mut line_start = offset;
    for line in body.split('\n') {
        let pos = line_start;
        line_start += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        let Some((name, value)) = line.split_once(':') else {
            return Err(ChainParseError::new(
                MalformedTypeEntry,
                pos,
                format!("expected `name: intensity`, got `{}`", line.trim()),
            ));
        };
        let kind = DegradationType::from_loose_name(name).ok_or_else(|| {
            ChainParseError::new(
                MalformedTypeEntry,
                pos,
                format!("unknown degradation `{}`", name.trim()),
            )
        })?;
        let value = value.trim();
        let intensity: f64 = value
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| {
                ChainParseError::new(
                    MalformedTypeEntry,
                    pos,
                    format!("intensity `{value}` is not a number"),
                )
            })?;
        let spec = DegradationSpec::new(kind, intensity).map_err(|_| {
            ChainParseError::new(
                IntensityOutOfRange,
                pos,
                format!("intensity {intensity} outside [0, 1]"),
            )
        })?;
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(ChainParseError::new(
            MalformedTypeEntry,
            offset,
            "TYPE segment has no entries",
        ));
    }
    Ok(specs)
}

fn assemble(
    text: &str,
    raw: &RawSegments<'_>,
    degradations: Vec<DegradationSpec>,
) -> Result<ReasoningChain, ChainParseError> {
    let body = |seg: Segment| raw.bodies[seg.rank()].map(|(_, b)| b.trim().to_owned());
    let conclusion = body(Segment::Conclusion).unwrap_or_default();
    if conclusion.is_empty() {
        let pos = raw.bodies[Segment::Conclusion.rank()].map_or(text.len(), |(p, _)| p);
        return Err(ChainParseError::new(
            ChainErrorKind::MissingSegment,
            pos,
            "CONCLUSION segment is empty",
        ));
    }
    Ok(ReasoningChain {
        degradations,
        influence: body(Segment::Influence).unwrap_or_default(),
        reasoning: body(Segment::Reasoning).unwrap_or_default(),
        conclusion,
        answer: body(Segment::Answer).filter(|a| !a.is_empty()),
    })
}

/// Strict parse: every structural rule and every `TYPE` entry must hold.
pub fn parse_chain(text: &str) -> Result<ReasoningChain, ChainParseError> {
    let raw = split_segments(text)?;
    let (type_pos, type_body) = raw.bodies[Segment::Type.rank()].expect("required segment");
    let degradations = parse_type_body(type_body, type_pos)?;
    assemble(text, &raw, degradations)
}

/// Parse used when scoring model outputs: structure must hold, but a
/// malformed `TYPE` body yields an empty degradation list instead of an error.
pub fn parse_chain_tolerant(text: &str) -> Result<ReasoningChain, ChainParseError> {
    let raw = split_segments(text)?;
    let (type_pos, type_body) = raw.bodies[Segment::Type.rank()].expect("required segment");
    let degradations = parse_type_body(type_body, type_pos).unwrap_or_default();
    assemble(text, &raw, degradations)
}

/// Canonical text: segments back to back, TYPE entries one per line with two
/// decimals.
pub fn serialize_chain(chain: &ReasoningChain) -> String {
    let type_body = chain
        .degradations
        .iter()
        .map(|d| format!("{}: {:.2}", d.kind().name(), round2(d.intensity())))
        .collect::<Vec<_>>()
        .join("\n");
    let mut out = String::new();
    let mut push = |seg: Segment, body: &str| {
        out.push_str(seg.open_token());
        out.push_str(body);
        out.push_str(seg.close_token());
    };
    push(Segment::Type, &type_body);
    push(Segment::Influence, &chain.influence);
    push(Segment::Reasoning, &chain.reasoning);
    push(Segment::Conclusion, &chain.conclusion);
    if let Some(answer) = &chain.answer {
        push(Segment::Answer, answer);
    }
    out
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Length of the reasoning in words: influence + reasoning + conclusion.
/// TYPE and ANSWER are structured outputs and do not count.
pub fn chain_length(chain: &ReasoningChain) -> usize {
    word_count(&chain.influence) + word_count(&chain.reasoning) + word_count(&chain.conclusion)
}
