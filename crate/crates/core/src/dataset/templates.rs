//! Prompt templates for the annotation steps.
//!
//! Templates are plain text with `{placeholder}` slots. Each step has a fixed
//! set of placeholders it fills; a template must use every required one and
//! nothing outside the allowed set. Image placeholders render as
//! `[image N]` markers pointing into the request's image list.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemplateName {
    Influence,
    Reasoning,
    Conclusion,
    LenShort,
    LenMedium,
    LenLong,
}

impl TemplateName {
    /// Placeholders the template must reference.
    pub fn required(self) -> &'static [&'static str] {
        match self {
            Self::Influence => &["degraded_image", "recipe", "answer"],
            Self::Reasoning => &["degraded_image", "recipe", "influence", "answer"],
            Self::Conclusion => &["reasoning", "answer"],
            Self::LenShort | Self::LenMedium | Self::LenLong => &["segment", "text", "target_words"],
        }
    }

    /// Placeholders the step can fill.
    pub fn allowed(self) -> &'static [&'static str] {
        match self {
            Self::Influence => &["original_image", "degraded_image", "recipe", "question", "answer"],
            Self::Reasoning => &["degraded_image", "recipe", "influence", "question", "answer"],
            Self::Conclusion => &["reasoning", "question", "answer"],
            Self::LenShort | Self::LenMedium | Self::LenLong => {
                &["segment", "text", "target_words", "recipe", "answer"]
            }
        }
    }
}

/// Names of all `{identifier}` slots in `body`, in order of appearance.
pub fn placeholders(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    out.push(name);
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), String> {
        let used = placeholders(&self.body);
        for req in self.name.required() {
            if !used.contains(req) {
                return Err(format!("{:?} template lacks {{{req}}}", self.name));
            }
        }
        if let Some(bad) = used.iter().find(|u| !self.name.allowed().contains(u)) {
            return Err(format!("{:?} template uses unknown {{{bad}}}", self.name));
        }
        Ok(())
    }

    /// Substitutes every placeholder. Missing values render empty.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> String {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if self.name.allowed().contains(&&after[..close]) => {
                    if let Some(v) = vars.get(&after[..close]) {
                        out.push_str(v);
                    }
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// The six templates used by the pipeline. Deserializes from a JSON object
/// keyed by template name; missing entries fall back to the built-ins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateSet {
    pub influence: String,
    pub reasoning: String,
    pub conclusion: String,
    pub len_short: String,
    pub len_medium: String,
    pub len_long: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            influence: "You are shown a pristine photo {original_image} and a degraded copy \
{degraded_image}. The copy was produced by these degradations (type: intensity in [0, 1]):\n\
{recipe}\nQuestion: {question}\nCorrect answer: {answer}\n\
Describe in plain prose how these degradations change what can be seen in the degraded copy \
and how they could mislead someone answering the question. Do not use any markup."
                .into(),
            reasoning: "Degraded image {degraded_image}, degradations:\n{recipe}\n\
Their effect on the content: {influence}\nQuestion: {question}\nCorrect answer: {answer}\n\
Compensating for the effects above, write the step-by-step reasoning a viewer of the \
undegraded image would follow to reach the answer. Plain prose only."
                .into(),
            conclusion: "Reasoning about the undegraded scene: {reasoning}\nQuestion: {question}\n\
Correct answer: {answer}\nWrite a one- or two-sentence conclusion that states the answer and \
follows from the reasoning. Plain prose only."
                .into(),
            len_short: "Rewrite this {segment} passage in about {target_words} words. The image is \
only mildly degraded, so keep it brief and direct. Keep every fact, add no markup.\n\n{text}"
                .into(),
            len_medium: "Rewrite this {segment} passage in about {target_words} words. The image is \
noticeably degraded; keep the key compensating steps. Add no markup.\n\n{text}"
                .into(),
            len_long: "Rewrite this {segment} passage in about {target_words} words. The image is \
heavily degraded; spell out each compensating inference in detail. Add no markup.\n\n{text}"
                .into(),
        }
    }
}

impl TemplateSet {
    pub fn get(&self, name: TemplateName) -> PromptTemplate {
        let body = match name {
            TemplateName::Influence => &self.influence,
            TemplateName::Reasoning => &self.reasoning,
            TemplateName::Conclusion => &self.conclusion,
            TemplateName::LenShort => &self.len_short,
            TemplateName::LenMedium => &self.len_medium,
            TemplateName::LenLong => &self.len_long,
        };
        PromptTemplate {
            name,
            body: body.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        use TemplateName::*;
        for name in [Influence, Reasoning, Conclusion, LenShort, LenMedium, LenLong] {
            self.get(name).validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid() {
        TemplateSet::default().validate().unwrap();
    }

    #[test]
    fn missing_required_placeholder() {
        let t = PromptTemplate {
            name: TemplateName::Conclusion,
            body: "Answer: {answer}".into(),
        };
        assert!(t.validate().unwrap_err().contains("reasoning"));
    }

    #[test]
    fn unknown_placeholder() {
        let t = PromptTemplate {
            name: TemplateName::Conclusion,
            body: "{reasoning} {answer} {weather}".into(),
        };
        assert!(t.validate().unwrap_err().contains("weather"));
    }

    #[test]
    fn render_substitutes_and_keeps_literal_braces() {
        let t = PromptTemplate {
            name: TemplateName::Conclusion,
            body: "R={reasoning}; A={answer}; json {\"k\": 1}".into(),
        };
        let mut vars = BTreeMap::new();
        vars.insert("reasoning", "because".to_string());
        vars.insert("answer", "bus".to_string());
        assert_eq!(t.render(&vars), "R=because; A=bus; json {\"k\": 1}");
    }

    #[test]
    fn placeholder_scan() {
        assert_eq!(placeholders("{a} x {b_c} {Not} {}"), vec!["a", "b_c"]);
    }
}
