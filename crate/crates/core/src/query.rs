//! Query parsing into the subject noun phrase and its dynamic context.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, AgentBackend, CallOptions};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("query is empty")]
    Empty,
    #[error("interrogative queries are not supported: {0:?}")]
    Interrogative(String),
    #[error("noun phrase is empty")]
    EmptyNounPhrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedQuery {
    pub raw: String,
    /// Subject noun phrase.
    pub np: String,
    /// Everything dynamic or relational about the subject; may be empty.
    pub context: String,
}

impl ParsedQuery {
    pub fn new(raw: impl Into<String>, np: impl Into<String>, context: impl Into<String>) -> Result<Self, QueryError> {
        let (raw, np) = (raw.into(), np.into());
        if raw.trim().is_empty() {
            return Err(QueryError::Empty);
        }
        if np.trim().is_empty() {
            return Err(QueryError::EmptyNounPhrase);
        }
        Ok(Self { raw, np, context: context.into() })
    }

    /// Request payload for the parse role, before np/context are known.
    pub(crate) fn unparsed(raw: &str) -> Self {
        Self { raw: raw.to_string(), np: String::new(), context: String::new() }
    }
}

const WH_WORDS: &[&str] = &["who", "whom", "whose", "what", "which", "where", "when", "why", "how"];

const RELATIVE_PRONOUNS: &[&str] = &["who", "that", "which"];

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "am", "has", "have", "had", "does", "do", "did", "can", "could", "will",
    "would", "shall", "should", "may", "might", "must",
];

// Irregular or -s-less finite forms common in grounding captions.
const IRREGULAR_VERBS: &[&str] = &[
    "sat", "stood", "ran", "went", "held", "took", "gave", "got", "came", "ate", "drank", "threw", "caught",
    "fell", "left", "hit", "put", "rode", "drove", "flew", "swam", "saw", "led", "kept",
];

const NO_VERB_BEFORE: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "his", "her", "its", "their", "my", "your", "our",
    "some", "many", "two", "three", "four", "five", "several", "of", "in", "on", "at", "with", "by", "for",
    "from", "to", "into", "onto", "under", "over", "behind", "near", "beside", "wearing",
];

const PLURAL_NOUNS: &[&str] = &[
    "glasses", "clothes", "pants", "jeans", "shorts", "trousers", "shoes", "boots", "gloves", "sunglasses",
    "hairs", "others", "things", "dogs", "cats", "balls", "toys", "bags", "flowers", "stairs", "bus", "dress",
    "yes", "this", "his", "its",
];

fn normalize(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn is_interrogative(q: &str) -> bool {
    if q.trim_end().ends_with('?') {
        return true;
    }
    q.split_whitespace()
        .next()
        .map(normalize)
        .is_some_and(|w| WH_WORDS.contains(&w.as_str()) || AUXILIARIES.contains(&w.as_str()))
}

fn is_finite_verb(word: &str, prev: Option<&str>) -> bool {
    if AUXILIARIES.contains(&word) || IRREGULAR_VERBS.contains(&word) {
        return true;
    }
    let third_person = word.len() > 3
        && word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
        && !PLURAL_NOUNS.contains(&word);
    third_person && prev.is_some_and(|p| !NO_VERB_BEFORE.contains(&p))
}

/// Offline splitter: the noun phrase runs up to the first finite verb.
/// Without a verb (or with the verb first) the whole query is the noun phrase.
pub fn split_rule_based(q: &str) -> Result<ParsedQuery, QueryError> {
    let raw = q.trim();
    if raw.is_empty() {
        return Err(QueryError::Empty);
    }
    if is_interrogative(raw) {
        return Err(QueryError::Interrogative(raw.to_string()));
    }
    let mut prev: Option<String> = None;
    let mut offset = 0usize;
    // the first verb after a relative pronoun belongs to the noun phrase
    let mut in_relative = false;
    for token in raw.split_whitespace() {
        let start = offset + raw[offset..].find(token).expect("token comes from raw");
        offset = start + token.len();
        let word = normalize(token);
        if start > 0 && is_finite_verb(&word, prev.as_deref()) {
            if !in_relative {
                return ParsedQuery::new(raw, raw[..start].trim_end(), raw[start..].trim());
            }
            in_relative = false;
        } else if RELATIVE_PRONOUNS.contains(&word.as_str()) {
            in_relative = true;
        }
        prev = Some(word);
    }
    ParsedQuery::new(raw, raw, "")
}

/// Parse with a language backend when one is configured; any backend failure
/// falls back to [`split_rule_based`].
pub fn parse_query(q: &str, backend: Option<&dyn AgentBackend>, opts: &CallOptions) -> Result<ParsedQuery, QueryError> {
    let raw = q.trim();
    if raw.is_empty() {
        return Err(QueryError::Empty);
    }
    if is_interrogative(raw) {
        return Err(QueryError::Interrogative(raw.to_string()));
    }
    if let Some(b) = backend {
        if let Some((np, context)) = agents::parse_fields(raw, b, opts).value {
            return ParsedQuery::new(raw, np, context);
        }
    }
    split_rule_based(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{BackendError, ScriptedAgent, WireResponse};

    fn split(q: &str) -> (String, String) {
        let p = split_rule_based(q).unwrap();
        (p.np, p.context)
    }

    #[test]
    fn rule_based_examples() {
        assert_eq!(
            split("the man in red walks to the door and sits"),
            ("the man in red".into(), "walks to the door and sits".into())
        );
        assert_eq!(split("a dog"), ("a dog".into(), "".into()));
        assert_eq!(split("the red block moves right"), ("the red block".into(), "moves right".into()));
    }

    #[test]
    fn rule_based_held_out_sentences() {
        let cases = [
            ("an adult man in black hugs a child", "an adult man in black"),
            ("a child in glasses rides a bike", "a child in glasses"),
            ("the woman with two dogs is on the grass", "the woman with two dogs"),
            ("the boy who wears a hat throws the ball", "the boy who wears a hat"),
            ("a man held a cup", "a man"),
            ("the cat sat on the mat", "the cat"),
        ];
        for (q, np) in cases {
            assert_eq!(split_rule_based(q).unwrap().np, np, "query {q:?}");
        }
    }

    #[test]
    fn interrogatives_rejected() {
        for q in ["what is the man holding?", "who walks to the door", "is there a dog"] {
            assert!(matches!(split_rule_based(q), Err(QueryError::Interrogative(_))), "{q}");
        }
        assert_eq!(split_rule_based("   "), Err(QueryError::Empty));
    }

    #[test]
    fn np_is_prefix_of_raw() {
        for q in ["  the tall man  jumps high ", "walks away", "a red ball bounces twice"] {
            let p = split_rule_based(q).unwrap();
            assert!(p.raw.starts_with(&p.np), "{p:?}");
            assert!(!p.np.is_empty());
        }
    }

    #[test]
    fn backend_passthrough_and_fallback() {
        let echo = ScriptedAgent::new("echo", |_| Ok(WireResponse::parsed("NP", "CTX")));
        let p = parse_query("the man walks", Some(&echo), &CallOptions::default()).unwrap();
        assert_eq!((p.np.as_str(), p.context.as_str()), ("NP", "CTX"));

        let down = ScriptedAgent::new("down", |_| Err(BackendError::Transport("x".into())));
        let p = parse_query("the man walks", Some(&down), &CallOptions { retries: 2, ..Default::default() }).unwrap();
        assert_eq!((p.np.as_str(), p.context.as_str()), ("the man", "walks"));

        let junk = ScriptedAgent::new("junk", |_| Ok(WireResponse::span(1, 2, "not json")));
        let p = parse_query("a dog", Some(&junk), &CallOptions::default()).unwrap();
        assert_eq!(p.np, "a dog");
    }
}
