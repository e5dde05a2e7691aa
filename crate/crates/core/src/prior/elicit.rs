//! Chat-endpoint prior elicitation: prompt construction and response parsing.
//!
//! Only the HTTP call itself sits behind the `http` feature; prompt and
//! parsing helpers are always available so cached responses can be replayed.

use std::collections::BTreeMap;

use super::{parse_pair_key, EdgePrior};
use crate::error::{Error, Result};

pub const SYSTEM_MESSAGE: &str = "Return ONLY valid JSON.";

/// All ordered pairs of distinct variables, pairs touching the treatment or
/// outcome first, truncated to 120 pairs for at most 15 variables and 60 otherwise.
pub fn build_pair_list(variables: &[String], treatment: &str, outcome: &str) -> Vec<(String, String)> {
    let touches = |u: &str, v: &str| [u, v].iter().any(|x| *x == treatment || *x == outcome);
    let mut first = Vec::new();
    let mut rest = Vec::new();
    for u in variables {
        for v in variables {
            if u == v {
                continue;
            }
            let pair = (u.clone(), v.clone());
            if touches(u, v) {
                first.push(pair);
            } else {
                rest.push(pair);
            }
        }
    }
    first.extend(rest);
    let cap = if variables.len() <= 15 { 120 } else { 60 };
    first.truncate(cap);
    first
}

pub fn build_user_prompt(description: &str, pairs: &[(String, String)]) -> String {
    let list = pairs
        .iter()
        .map(|(u, v)| format!("\"{u}->{v}\""))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "{description}\n\n\
         For each directed edge below, give a probability in [0,1] that this causal relationship exists in the true DAG.\n\n\
         IMPORTANT: Output ONLY a JSON object. No reasoning.\n\
         Example: {{\"A->B\": 0.8, \"B->C\": 0.1}}\n\n\
         Edges:\n{list}"
    )
}

fn strip_tags(text: &str) -> String {
    // harmony-style `<|...|>` markers
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("<|") {
        out.push_str(&rest[..start]);
        match rest[start..].find("|>") {
            Some(end) => rest = &rest[start + end + 2..],
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn strip_fences(text: &str) -> String {
    if !text.contains("```") {
        return text.to_string();
    }
    // keep fenced bodies, dropping the fence lines and language tags
    let mut out = String::new();
    for (i, part) in text.split("```").enumerate() {
        if i % 2 == 1 {
            let body = part.split_once('\n').map_or(part, |(first, body)| {
                if first.trim().chars().all(|c| c.is_ascii_alphanumeric()) {
                    body
                } else {
                    part
                }
            });
            out.push_str(body);
            out.push('\n');
        }
    }
    out
}

/// Extracts the largest `{...}` substring (first `{` to last `}`) after
/// removing tags and code fences.
pub fn extract_json_object(text: &str) -> Option<String> {
    let cleaned = strip_fences(&strip_tags(text));
    let start = cleaned.find('{')?;
    let end = cleaned.rfind('}')?;
    (end > start).then(|| cleaned[start..=end].to_string())
}

/// Parses a model response into pair probabilities. Pairs naming unknown
/// variables or self-loops are skipped; values are clamped into `[0, 1]`.
pub fn parse_prior_response(text: &str, variables: &[String]) -> Result<BTreeMap<(String, String), f64>> {
    let json = extract_json_object(text).ok_or_else(|| Error::InvalidPrior("no JSON object in response".into()))?;
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(&json)?;
    let mut out = BTreeMap::new();
    for (k, v) in raw {
        let Ok((u, w)) = parse_pair_key(&k) else { continue };
        if u == w || !variables.contains(&u) || !variables.contains(&w) {
            continue;
        }
        if let Some(p) = v.as_f64().filter(|p| p.is_finite()) {
            out.insert((u, w), p.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

#[cfg(feature = "http")]
fn response_text(body: &str) -> String {
    // OpenAI-style chat completion bodies carry the text in choices[0].message.content
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/choices/0/message/content")
                .or_else(|| v.pointer("/choices/0/text"))
                .or_else(|| v.pointer("/message/content"))
                .and_then(|c| c.as_str().map(str::to_string))
        })
        .unwrap_or_else(|| body.to_string())
}

/// Queries a chat-completion endpoint for an edge prior.
///
/// Never fails: after `retries` unsuccessful attempts the uniform prior is
/// returned together with the collected warnings.
#[cfg(feature = "http")]
pub fn elicit_prior_http(
    endpoint: &str,
    model: &str,
    variables: &[String],
    treatment: &str,
    outcome: &str,
    description: &str,
    retries: usize,
) -> (EdgePrior, Vec<String>) {
    use std::time::Duration;

    let pairs = build_pair_list(variables, treatment, outcome);
    let body = serde_json::json!({
        "model": model,
        "messages": [
            {"role": "system", "content": SYSTEM_MESSAGE},
            {"role": "user", "content": build_user_prompt(description, &pairs)},
        ],
        "temperature": 0.0,
    });
    let needed = variables.len().max(5);
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(120)))
        .build()
        .into();

    let mut warnings = Vec::new();
    for attempt in 1..=retries.max(1) {
        let text = match agent.post(endpoint).send_json(&body) {
            Ok(mut resp) => match resp.body_mut().read_to_string() {
                Ok(s) => response_text(&s),
                Err(e) => {
                    warnings.push(format!("attempt {attempt}: reading response failed: {e}"));
                    continue;
                }
            },
            Err(e) => {
                warnings.push(format!("attempt {attempt}: request failed: {e}"));
                continue;
            }
        };
        match parse_prior_response(&text, variables) {
            Ok(map) if map.len() >= needed => match EdgePrior::from_pairs(map, variables) {
                Ok(prior) => return (prior, warnings),
                Err(e) => warnings.push(format!("attempt {attempt}: {e}")),
            },
            Ok(map) => warnings.push(format!(
                "attempt {attempt}: response covered {} pairs, need {needed}",
                map.len()
            )),
            Err(e) => warnings.push(format!("attempt {attempt}: {e}")),
        }
    }
    warnings.push("elicitation failed; falling back to the uniform 0.5 prior".into());
    for w in &warnings {
        log::warn!("{w}");
    }
    (EdgePrior::uniform(), warnings)
}
