//! Question generation from an (answer, context) pair.

use serde_json::json;

use crate::backend::{str_field, Transport};
use crate::error::{Error, Result};
use crate::model::QaRecord;
use crate::text::normalize_text;

pub const DEFAULT_SEP: &str = "[SEP]";

#[derive(Debug, Clone, PartialEq)]
pub struct QgInput {
    pub answer: String,
    pub context: String,
    pub sep_token: String,
}

impl QgInput {
    pub fn new(answer: &str, context: &str) -> Self {
        QgInput {
            answer: answer.to_string(),
            context: context.to_string(),
            sep_token: DEFAULT_SEP.to_string(),
        }
    }

    pub fn formatted(&self) -> Result<String> {
        format_qg_input(&self.answer, &self.context, &self.sep_token)
    }
}

/// `answer [SEP] context`, joined by single spaces.
pub fn format_qg_input(answer: &str, context: &str, sep: &str) -> Result<String> {
    let answer = normalize_text(answer);
    let context = normalize_text(context);
    let sep = sep.trim();
    if answer.is_empty() {
        return Err(Error::EmptyField("answer"));
    }
    if context.is_empty() {
        return Err(Error::EmptyField("context"));
    }
    if sep.is_empty() {
        return Err(Error::EmptyField("sep"));
    }
    if answer.contains(sep) {
        return Err(Error::InvariantViolation {
            id: answer.clone(),
            detail: format!("answer contains the separator {sep:?}"),
        });
    }
    if context.split(' ').any(|t| t == sep) {
        return Err(Error::InvariantViolation {
            id: answer.clone(),
            detail: format!("context contains the separator {sep:?}"),
        });
    }
    Ok(format!("{answer} {sep} {context}"))
}

pub trait QgBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, input: &QgInput) -> Result<String>;
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Deterministic stand-in for a trained generator: turns the clause that
/// holds the answer into "What corresponds to: <clause with the answer
/// removed>?".
#[derive(Debug, Clone, Default)]
pub struct TemplateBackend;

fn sentence_holding<'a>(context: &'a str, answer: &str) -> &'a str {
    let sentences: Vec<&str> = context
        .split(['.', '!', '?', '؟', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    sentences
        .iter()
        .find(|s| s.contains(answer))
        .or(sentences.first())
        .copied()
        .unwrap_or("")
}

impl QgBackend for TemplateBackend {
    fn id(&self) -> &str {
        "template"
    }

    fn generate(&self, input: &QgInput) -> Result<String> {
        let answer = normalize_text(&input.answer);
        let context = normalize_text(&input.context);
        let mut clause = sentence_holding(&context, &answer).to_string();
        while !answer.is_empty() && clause.contains(&answer) {
            clause = clause.replace(&answer, " ");
        }
        let clause = normalize_text(&clause);
        let clause = clause.trim_matches(|c: char| c == ',' || c == '،' || c.is_whitespace());
        if clause.is_empty() {
            return Ok("What corresponds to the missing answer?".to_string());
        }
        Ok(format!("What corresponds to: {clause}?"))
    }
}

/// Backend reached over the external protocol:
/// `{"answer", "context"}` -> `{"question"}`.
pub struct ExternalQgBackend {
    id: String,
    transport: Box<dyn Transport>,
}

impl ExternalQgBackend {
    pub fn new(id: impl Into<String>, transport: Box<dyn Transport>) -> Self {
        ExternalQgBackend {
            id: id.into(),
            transport,
        }
    }
}

impl QgBackend for ExternalQgBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, input: &QgInput) -> Result<String> {
        let reply = self
            .transport
            .call(&json!({"answer": input.answer, "context": input.context}))?;
        Ok(str_field(&reply, "question")?.to_string())
    }

    fn concurrent_safe(&self) -> bool {
        self.transport.concurrent_safe()
    }
}

/// Produce the question for a record. With `bypass` set and a question
/// already present in the record, it is used verbatim.
pub fn generate_question(backend: &dyn QgBackend, rec: &QaRecord, bypass: bool) -> Result<String> {
    if bypass && !rec.question.trim().is_empty() {
        return Ok(rec.question.clone());
    }
    let input = QgInput::new(&rec.answer, &rec.context);
    let question = backend
        .generate(&input)
        .map_err(|e| Error::Backend(format!("{}: {e}", backend.id())))?;
    if question.trim().is_empty() {
        return Err(Error::Backend(format!("{} returned an empty question", backend.id())));
    }
    Ok(question)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn record(answer: &str, context: &str, question: &str) -> QaRecord {
        QaRecord {
            id: "r".into(),
            context: context.into(),
            question: question.into(),
            answer: answer.into(),
            answer_start: None,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn input_format() {
        assert_eq!(
            format_qg_input("Tehran", "Tehran is the capital.", "[SEP]").unwrap(),
            "Tehran [SEP] Tehran is the capital."
        );
        assert_eq!(format_qg_input("x", "y", "<s>").unwrap(), "x <s> y");
        assert!(matches!(
            format_qg_input("", "y", "[SEP]"),
            Err(Error::EmptyField("answer"))
        ));
        assert!(format_qg_input("a [SEP] b", "y", "[SEP]").is_err());
    }

    #[test]
    fn template_hides_answer() {
        let rec = record("1969", "Apollo 11 landed on the Moon in 1969. It was crewed.", "");
        let q = generate_question(&TemplateBackend, &rec, false).unwrap();
        assert_eq!(q, "What corresponds to: Apollo 11 landed on the Moon in?");
        assert!(!q.contains("1969"));
        assert_eq!(q, generate_question(&TemplateBackend, &rec, false).unwrap());
    }

    #[test]
    fn template_handles_answer_only_context() {
        let rec = record("1969", "1969", "");
        let q = generate_question(&TemplateBackend, &rec, false).unwrap();
        assert!(!q.contains("1969"));
    }

    #[test]
    fn bypass_uses_record_question() {
        let rec = record("1969", "In 1969 it landed.", "When did it land?");
        assert_eq!(
            generate_question(&TemplateBackend, &rec, true).unwrap(),
            "When did it land?"
        );
    }

    struct Silent;
    impl QgBackend for Silent {
        fn id(&self) -> &str {
            "silent"
        }
        fn generate(&self, _: &QgInput) -> Result<String> {
            Ok("  ".into())
        }
    }

    #[test]
    fn empty_output_is_backend_error() {
        let rec = record("a", "b", "");
        assert!(matches!(
            generate_question(&Silent, &rec, false),
            Err(Error::Backend(_))
        ));
    }
}
