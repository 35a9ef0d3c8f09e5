//! The deterministic mock backend.
//!
//! Text mode emits a fixed marker plus the hex digest of (backend id, every
//! message, seed, temperature bits, top_p bits), so output is a pure function
//! of the request and identical across processes and platforms.
//!
//! Structured mode emits a schema-valid JSON record keyed by the same
//! digest. The record shape follows request markers embedded in the prompt
//! (the constants below); payload content is read back out of the marked
//! prompt sections, so extraction surfaces are substrings of the source text
//! and downstream span checks hold.

use super::{GenerationRequest, ModelIoError, OutputMode, TextBackend};
use crate::util::framed_digest_hex;
use serde_json::json;

/// Prefix of every text-mode mock completion.
pub const MOCK_PREFIX: &str = "mock:";

/// Section markers of an EPSS forecast question. When a text-mode prompt
/// carries all three, the mock answers with a read-back forecast instead
/// of a digest: requested dates present in the history echo their
/// observed score, every other date carries the latest observation.
pub const EPSS_REQUEST_MARKER: &str = "## EPSS Forecast Request";
pub const EPSS_HISTORY_HEADER: &str = "Known EPSS history:";
pub const EPSS_DATES_HEADER: &str = "Requested dates:";

/// Request markers a prompt may carry. They read as section headers in real
/// prompts and double as shape selectors for the mock.
pub const REQ_ENTITIES: &str = "[[extract-entities]]";
pub const REQ_RELATIONS: &str = "[[extract-relations]]";
pub const REQ_SCORES: &str = "[[score-documents]]";
pub const REQ_CHOICE: &str = "[[classify]]";

/// Block delimiters for prompt payloads.
pub const TEXT_BEGIN: &str = "[[text]]";
pub const TEXT_END: &str = "[[/text]]";
pub const ENTITIES_BEGIN: &str = "[[entities]]";
pub const ENTITIES_END: &str = "[[/entities]]";
pub const DOCUMENTS_BEGIN: &str = "[[documents]]";
pub const DOCUMENTS_END: &str = "[[/documents]]";
pub const OPTIONS_BEGIN: &str = "[[options]]";
pub const OPTIONS_END: &str = "[[/options]]";

/// Digest of everything that identifies a generation call.
pub fn request_digest(backend_id: &str, request: &GenerationRequest) -> String {
    let seed = request.params.seed.to_le_bytes();
    let temperature = request.params.temperature.to_bits().to_le_bytes();
    let top_p = request.params.top_p.to_bits().to_le_bytes();
    let mut parts: Vec<&[u8]> = vec![backend_id.as_bytes()];
    for message in &request.messages {
        parts.push(message.role.name().as_bytes());
        parts.push(message.content.as_bytes());
    }
    parts.push(&seed);
    parts.push(&temperature);
    parts.push(&top_p);
    framed_digest_hex(&parts)
}

/// The text between `begin` and `end` markers, if both are present in order.
pub fn marked_block<'t>(text: &'t str, begin: &str, end: &str) -> Option<&'t str> {
    let start = text.find(begin)? + begin.len();
    let stop = text[start..].find(end)? + start;
    Some(&text[start..stop])
}

/// Lines of a marked block that start with `- `, with the prefix stripped.
fn block_items(text: &str, begin: &str, end: &str) -> Vec<String> {
    marked_block(text, begin, end)
        .map(|block| {
            block
                .lines()
                .filter_map(|line| line.trim().strip_prefix("- "))
                .map(|item| item.trim().to_string())
                .filter(|item| !item.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

const STOPWORDS: [&str; 20] = [
    "the", "a", "an", "this", "that", "these", "those", "in", "on", "at", "it", "we", "they",
    "as", "is", "was", "are", "after", "before", "its",
];

fn trim_token(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '-' && c != '.')
        .trim_matches('.')
}

fn is_name_token(token: &str) -> bool {
    let mut chars = token.chars();
    match chars.next() {
        Some(c) if c.is_ascii_uppercase() => true,
        Some(c) if c.is_ascii_digit() => token.chars().any(|c| c.is_ascii_alphabetic()),
        _ => false,
    }
}

fn looks_like_cve(token: &str) -> bool {
    let Some(rest) = token.strip_prefix("CVE-") else {
        return false;
    };
    let mut parts = rest.splitn(2, '-');
    let year = parts.next().unwrap_or("");
    let number = parts.next().unwrap_or("");
    year.len() == 4
        && year.bytes().all(|b| b.is_ascii_digit())
        && number.len() >= 4
        && number.bytes().all(|b| b.is_ascii_digit())
}

fn looks_like_host(token: &str) -> bool {
    token.contains('.')
        && !token.contains('/')
        && token.split('.').count() >= 2
        && token
            .split('.')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '-'))
        && token.chars().any(|c| c.is_ascii_alphabetic())
}

fn looks_like_actor(token: &str) -> bool {
    token.len() >= 3
        && token.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
        && token.chars().any(|c| c.is_ascii_uppercase())
        && token.chars().any(|c| c.is_ascii_digit())
}

fn categorize(surface: &str) -> &'static str {
    let first = surface.split_whitespace().next().unwrap_or("");
    if looks_like_cve(first) {
        "identifier"
    } else if looks_like_host(first) && first.to_lowercase() == *first {
        "infrastructure"
    } else if looks_like_actor(first) {
        "threat actor"
    } else if surface
        .split_whitespace()
        .last()
        .is_some_and(|last| last.chars().next().is_some_and(|c| c.is_ascii_digit()))
    {
        "product"
    } else {
        "other"
    }
}

/// Fixed, deterministic candidate rule: CVE ids, lowercase host names, and
/// capitalized token runs (up to 3 tokens), first four distinct hits in
/// order of appearance. Every surface is a verbatim substring of `payload`.
pub fn candidate_entities(payload: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut push = |surface: &str| {
        if out.len() < 4
            && !surface.is_empty()
            && !out.iter().any(|(s, _)| s.eq_ignore_ascii_case(surface))
        {
            out.push((surface.to_string(), categorize(surface).to_string()));
        }
    };

    let tokens: Vec<&str> = payload.split_whitespace().map(trim_token).collect();
    let mut idx = 0;
    while idx < tokens.len() {
        let token = tokens[idx];
        if looks_like_cve(token) || looks_like_host(token) {
            push(token);
            idx += 1;
            continue;
        }
        if is_name_token(token) && !STOPWORDS.contains(&token.to_lowercase().as_str()) {
            let mut run = vec![token];
            while run.len() < 3 {
                let next = match tokens.get(idx + run.len()) {
                    Some(next) => *next,
                    None => break,
                };
                if is_name_token(next) && !looks_like_cve(next) {
                    run.push(next);
                } else {
                    break;
                }
            }
            if run.len() > 1 || token.len() >= 3 {
                push(&run.join(" "));
            }
            idx += run.len();
            continue;
        }
        idx += 1;
    }
    out
}

/// `- ` items directly under `header`, with the prefix stripped. The item
/// list ends at the first non-item line.
fn header_items<'t>(text: &'t str, header: &str) -> Vec<&'t str> {
    let Some(start) = text.find(header) else {
        return Vec::new();
    };
    text[start + header.len()..]
        .lines()
        .skip(1)
        .map_while(|line| line.trim().strip_prefix("- "))
        .map(str::trim)
        .collect()
}

fn epss_forecast(prompt: &str) -> Option<String> {
    if !prompt.contains(EPSS_REQUEST_MARKER) {
        return None;
    }
    let mut history: Vec<(&str, f64)> = Vec::new();
    for item in header_items(prompt, EPSS_HISTORY_HEADER) {
        let (date, score) = item.split_once(':')?;
        let score: f64 = score.trim().trim_end_matches('%').parse().ok()?;
        history.push((date.trim(), score));
    }
    let requested = header_items(prompt, EPSS_DATES_HEADER);
    if history.is_empty() || requested.is_empty() {
        return None;
    }
    let latest = history.iter().max_by(|a, b| a.0.cmp(b.0)).expect("non-empty").1;
    let mut out = String::from("Read-back forecast from the observed history:\n");
    for date in requested {
        let score = history
            .iter()
            .find(|(d, _)| *d == date)
            .map_or(latest, |(_, s)| *s);
        out.push_str(&format!("- {date}: {score:.4}%\n"));
    }
    Some(out)
}

fn digest_u64(digest_hex: &str, salt: &str) -> u64 {
    let bytes = crate::util::framed_digest(&[digest_hex.as_bytes(), salt.as_bytes()]);
    u64::from_le_bytes(bytes[..8].try_into().expect("digest has 32 bytes"))
}

fn structured_response(digest: &str, prompt: &str) -> String {
    let record = if prompt.contains(REQ_ENTITIES) {
        let payload = marked_block(prompt, TEXT_BEGIN, TEXT_END).unwrap_or("");
        let items: Vec<_> = candidate_entities(payload)
            .into_iter()
            .map(|(surface, category)| json!({"surface": surface, "category": category}))
            .collect();
        json!({"mock_digest": digest, "items": items})
    } else if prompt.contains(REQ_RELATIONS) {
        let entities = block_items(prompt, ENTITIES_BEGIN, ENTITIES_END);
        let triples: Vec<_> = entities
            .windows(2)
            .take(3)
            .map(|pair| {
                json!({
                    "subject": pair[0],
                    "relation": "is associated with",
                    "object": pair[1],
                })
            })
            .collect();
        json!({"mock_digest": digest, "triples": triples})
    } else if prompt.contains(REQ_SCORES) {
        let scores: Vec<_> = block_items(prompt, DOCUMENTS_BEGIN, DOCUMENTS_END)
            .iter()
            .map(|line| {
                let id = line.split(':').next().unwrap_or(line).trim();
                let raw = digest_u64(digest, id) as f64 / u64::MAX as f64;
                let score = (raw * 1e6).round() / 1e6;
                json!({"id": id, "score": score})
            })
            .collect();
        json!({"mock_digest": digest, "scores": scores})
    } else if prompt.contains(REQ_CHOICE) {
        let options = block_items(prompt, OPTIONS_BEGIN, OPTIONS_END);
        let choice = if options.is_empty() {
            String::new()
        } else {
            options[(digest_u64(digest, "choice") % options.len() as u64) as usize].clone()
        };
        json!({"mock_digest": digest, "choice": choice})
    } else {
        json!({"mock_digest": digest})
    };
    record.to_string()
}

pub struct MockBackend {
    id: String,
}

impl MockBackend {
    pub fn new(id: &str) -> MockBackend {
        MockBackend { id: id.to_string() }
    }
}

impl TextBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelIoError> {
        let digest = request_digest(&self.id, request);
        match request.mode {
            OutputMode::Text => {
                if let Some(forecast) = epss_forecast(&request.prompt_text()) {
                    return Ok(forecast);
                }
                Ok(format!("{MOCK_PREFIX}{digest}"))
            }
            OutputMode::Structured => {
                Ok(structured_response(&digest, &request.prompt_text()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::SamplingParams;

    fn params(seed: u64) -> SamplingParams {
        SamplingParams::new(0.5, 0.9, seed).unwrap()
    }

    #[test]
    fn text_mode_is_a_pure_function_of_the_request() {
        let backend = MockBackend::new("mock-a");
        let request = GenerationRequest::text("abc", params(1));
        let first = backend.generate(&request).unwrap();
        let second = backend.generate(&request).unwrap();
        assert_eq!(first, second);
        assert!(first.starts_with(MOCK_PREFIX));
        assert_eq!(first.len(), MOCK_PREFIX.len() + 64);

        let other_seed = backend
            .generate(&GenerationRequest::text("abc", params(2)))
            .unwrap();
        assert_ne!(first, other_seed);

        let other_backend = MockBackend::new("mock-b")
            .generate(&request)
            .unwrap();
        assert_ne!(first, other_backend);
    }

    #[test]
    fn params_change_the_digest() {
        let backend = MockBackend::new("mock-a");
        let a = backend
            .generate(&GenerationRequest::text("abc", SamplingParams::new(0.5, 0.9, 1).unwrap()))
            .unwrap();
        let b = backend
            .generate(&GenerationRequest::text("abc", SamplingParams::new(0.6, 0.9, 1).unwrap()))
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn entity_candidates_are_substrings_with_sane_categories() {
        let payload = "Researchers tied APT28 to traffic toward evil-c2.example.com \
                       exploiting CVE-2024-40594 in Fortinet FortiOS 7.4 builds.";
        let candidates = candidate_entities(payload);
        assert!(!candidates.is_empty());
        for (surface, _) in &candidates {
            assert!(payload.contains(surface.as_str()), "{surface} not in payload");
        }
        let by_surface: std::collections::BTreeMap<_, _> = candidates
            .iter()
            .map(|(s, c)| (s.as_str(), c.as_str()))
            .collect();
        assert_eq!(by_surface.get("APT28"), Some(&"threat actor"));
        assert_eq!(by_surface.get("evil-c2.example.com"), Some(&"infrastructure"));
        assert_eq!(by_surface.get("CVE-2024-40594"), Some(&"identifier"));
    }

    #[test]
    fn epss_prompts_get_a_read_back_forecast() {
        let backend = MockBackend::new("mock-a");
        let prompt = "## Reasoning Request\nQuestion: ## EPSS Forecast Request\n\
                      Identifier: CVE-2024-0001\nReference date: 2024-06-15\n\
                      Known EPSS history:\n- 2024-04-01: 1.5000%\n- 2024-06-01: 4.0000%\n\
                      Requested dates:\n- 2024-04-01\n- 2024-07-15\n\nFindings follow.";
        let out = backend
            .generate(&GenerationRequest::text(prompt, params(9)))
            .unwrap();
        assert!(out.contains("- 2024-04-01: 1.5000%"), "history date echoes its value");
        assert!(out.contains("- 2024-07-15: 4.0000%"), "future date carries the latest");
        assert!(!out.starts_with(MOCK_PREFIX));

        let plain = backend
            .generate(&GenerationRequest::text("no forecast sections", params(9)))
            .unwrap();
        assert!(plain.starts_with(MOCK_PREFIX));
    }

    #[test]
    fn structured_entities_follow_the_marked_payload() {
        let backend = MockBackend::new("mock-a");
        let prompt = format!(
            "{REQ_ENTITIES}\n{TEXT_BEGIN}\nAPT28 used evil.example.net infrastructure.\n{TEXT_END}"
        );
        let out = backend
            .generate(&GenerationRequest::structured(&prompt, params(3)))
            .unwrap();
        let value: serde_json::Value = serde_json::from_str(&out).unwrap();
        let items = value["items"].as_array().unwrap();
        assert!(items
            .iter()
            .any(|item| item["surface"] == "APT28" && item["category"] == "threat actor"));
    }

    #[test]
    fn structured_relations_pair_listed_entities() {
        let backend = MockBackend::new("mock-a");
        let prompt = format!(
            "{REQ_RELATIONS}\n{ENTITIES_BEGIN}\n- APT28\n- C2 communication\n{ENTITIES_END}"
        );
        let out = backend
            .generate(&GenerationRequest::structured(&prompt, params(4)))
            .unwrap();
        let value: serde_json::Value = serde_json::from_str(&out).unwrap();
        let triples = value["triples"].as_array().unwrap();
        assert_eq!(triples.len(), 1);
        assert_eq!(triples[0]["subject"], "APT28");
        assert_eq!(triples[0]["relation"], "is associated with");
        assert_eq!(triples[0]["object"], "C2 communication");
    }

    #[test]
    fn structured_scores_cover_every_listed_document() {
        let backend = MockBackend::new("mock-a");
        let prompt = format!(
            "{REQ_SCORES}\n{DOCUMENTS_BEGIN}\n- doc-1: alpha\n- doc-2: beta\n{DOCUMENTS_END}"
        );
        let out = backend
            .generate(&GenerationRequest::structured(&prompt, params(5)))
            .unwrap();
        let value: serde_json::Value = serde_json::from_str(&out).unwrap();
        let scores = value["scores"].as_array().unwrap();
        assert_eq!(scores.len(), 2);
        assert_eq!(scores[0]["id"], "doc-1");
        let s = scores[0]["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn structured_choice_picks_a_listed_option() {
        let backend = MockBackend::new("mock-a");
        let prompt =
            format!("{REQ_CHOICE}\n{OPTIONS_BEGIN}\n- Attribution\n- Correlation\n{OPTIONS_END}");
        let out = backend
            .generate(&GenerationRequest::structured(&prompt, params(6)))
            .unwrap();
        let value: serde_json::Value = serde_json::from_str(&out).unwrap();
        let choice = value["choice"].as_str().unwrap();
        assert!(choice == "Attribution" || choice == "Correlation");
    }
}
