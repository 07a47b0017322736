use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::{Decision, Gateway, GatewayError, GatewayReply, HazardVerdict, Intent, SpeedDelta, Verbosity};
use crate::map::{NodeId, TopoMap};

/// `(label, hazardous, reason)`; labels not listed are treated as harmless
/// with confidence 0.5.
pub const HAZARD_RULES: &[(&str, bool, &str)] = &[
    (
        "wet_floor_sign",
        true,
        "a wet floor sign ahead: the floor may be slippery",
    ),
    ("warning_tape", true, "warning tape marks off the corridor ahead"),
    ("barrier", true, "a physical barrier blocks the corridor ahead"),
    ("broken_glass", true, "broken glass on the floor ahead"),
    ("chair", false, "a chair beside the path"),
    ("pot", false, "a plant pot beside the path"),
    ("poster", false, "a poster on the wall"),
    ("trash_can", false, "a trash can beside the path"),
];

const KNOWN_CONFIDENCE: f64 = 0.95;
const UNKNOWN_CONFIDENCE: f64 = 0.5;

/// Seeded label-flip injection: `fp` flips harmless verdicts to hazardous,
/// `fn_` flips hazardous verdicts to harmless. One uniform draw per call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub seed: u64,
}

/// Rule-based gateway. Pure apart from the optional confusion stream.
pub struct MockGateway {
    confusion: Option<(Confusion, Xoshiro256PlusPlus)>,
}

impl Default for MockGateway {
    fn default() -> Self {
        Self::new()
    }
}

impl MockGateway {
    pub fn new() -> Self {
        MockGateway { confusion: None }
    }

    pub fn with_confusion(confusion: Confusion) -> Self {
        MockGateway {
            confusion: Some((confusion, Xoshiro256PlusPlus::seed_from_u64(confusion.seed))),
        }
    }

    /// Pattern rules over the lowercased utterance.
    pub fn interpret(utterance: &str, map: &TopoMap) -> Intent {
        let text = normalize(utterance);
        if text.is_empty() {
            return Intent::Unknown;
        }
        let words: Vec<&str> = text.split(' ').collect();
        let has_word = |w: &str| words.contains(&w);

        for prefix in [
            "stop avoiding ",
            "don't avoid ",
            "do not avoid ",
            "no longer avoid ",
            "allow ",
        ] {
            if let Some(rest) = after(&text, prefix) {
                return Intent::ClearAvoidTag {
                    tag: tag_from_phrase(rest, map),
                };
            }
        }
        if let Some(rest) = after(&text, "avoid ") {
            let tag = tag_from_phrase(rest, map);
            if !tag.is_empty() {
                return Intent::SetAvoidTag { tag };
            }
        }
        for prefix in [
            "take me to ",
            "go to ",
            "navigate to ",
            "guide me to ",
            "bring me to ",
            "lead me to ",
        ] {
            if let Some(rest) = after(&text, prefix) {
                let place = strip_articles(rest).to_string();
                if place.is_empty() {
                    return Intent::Unknown;
                }
                let node = resolve_place(&place, map);
                return Intent::NavigateTo { place, node };
            }
        }
        if let Some(speed) = parse_speed(&words) {
            return Intent::SetSpeed { speed_mps: speed };
        }
        if text.contains("slow down") || has_word("slower") {
            return Intent::AdjustSpeed {
                delta: SpeedDelta::Slower,
            };
        }
        if text.contains("speed up") || has_word("faster") || has_word("hurry") {
            return Intent::AdjustSpeed {
                delta: SpeedDelta::Faster,
            };
        }
        if has_word("brief") || text.contains("less detail") || text.contains("shorter instructions") {
            return Intent::SetVerbosity {
                verbosity: Verbosity::Brief,
            };
        }
        if has_word("detailed") || text.contains("more detail") {
            return Intent::SetVerbosity {
                verbosity: Verbosity::Detailed,
            };
        }
        if has_word("reroute")
            || has_word("alternative")
            || text.contains("another way")
            || text.contains("other route")
        {
            return Intent::HazardDecision {
                decision: Decision::Reroute,
            };
        }
        if has_word("yes") || has_word("proceed") || has_word("continue") || text.contains("go ahead") {
            return Intent::HazardDecision {
                decision: Decision::Proceed,
            };
        }
        if has_word("no") {
            return Intent::HazardDecision {
                decision: Decision::Reroute,
            };
        }
        if text.contains("where am i") || has_word("status") || text.contains("how far") {
            return Intent::AskStatus;
        }
        Intent::Unknown
    }

    /// Rule-table verdict without confusion injection.
    pub fn rule_verdict(labels: &[String]) -> Result<HazardVerdict, GatewayError> {
        if labels.is_empty() {
            return Err(GatewayError::NoLabels);
        }
        let mut harmless: Option<HazardVerdict> = None;
        for label in labels {
            let rule = HAZARD_RULES.iter().find(|(l, _, _)| l == label);
            match rule {
                Some((_, true, reason)) => {
                    return Ok(HazardVerdict {
                        hazardous: true,
                        reason: (*reason).to_string(),
                        confidence: KNOWN_CONFIDENCE,
                    })
                }
                Some((_, false, reason)) => {
                    if harmless.is_none() {
                        harmless = Some(HazardVerdict {
                            hazardous: false,
                            reason: (*reason).to_string(),
                            confidence: KNOWN_CONFIDENCE,
                        });
                    }
                }
                None => {
                    harmless = Some(HazardVerdict {
                        hazardous: false,
                        reason: format!("unrecognized object `{label}`"),
                        confidence: UNKNOWN_CONFIDENCE,
                    });
                }
            }
        }
        Ok(harmless.expect("labels non-empty"))
    }
}

impl Gateway for MockGateway {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn interpret_query(&mut self, utterance: &str, map: &TopoMap) -> GatewayReply {
        Self::interpret(utterance, map).into()
    }

    fn classify_hazard(&mut self, labels: &[String], _context: &str) -> Result<HazardVerdict, GatewayError> {
        let verdict = Self::rule_verdict(labels)?;
        let Some((c, rng)) = self.confusion.as_mut() else {
            return Ok(verdict);
        };
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        Ok(if verdict.hazardous && u < c.fn_ {
            HazardVerdict {
                hazardous: false,
                reason: "nothing of concern detected".into(),
                confidence: 0.6,
            }
        } else if !verdict.hazardous && u < c.fp {
            HazardVerdict {
                hazardous: true,
                reason: format!("possible obstacle ahead ({})", labels.join(", ")),
                confidence: 0.6,
            }
        } else {
            verdict
        })
    }
}

fn normalize(s: &str) -> String {
    let lower: Vec<char> = s.to_lowercase().chars().collect();
    let cleaned: String = lower
        .iter()
        .enumerate()
        .map(|(i, &c)| match c {
            // keep decimal points
            '.' if lower.get(i + 1).is_some_and(|n| n.is_ascii_digit()) => '.',
            '.' | '!' | '?' | ',' => ' ',
            _ => c,
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn after<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    let at = if text.starts_with(prefix) {
        Some(0)
    } else {
        text.find(&format!(" {prefix}")).map(|i| i + 1)
    }?;
    Some(text[at + prefix.len()..].trim())
}

fn strip_articles(s: &str) -> &str {
    let mut s = s.trim();
    for a in ["the ", "a ", "an ", "any "] {
        if let Some(rest) = s.strip_prefix(a) {
            s = rest;
        }
    }
    s
}

fn tag_from_phrase(phrase: &str, map: &TopoMap) -> String {
    let joined = strip_articles(phrase).replace(' ', "_");
    let tags = map.all_tags();
    if tags.contains(joined.as_str()) {
        return joined;
    }
    if let Some(singular) = joined.strip_suffix('s') {
        if tags.contains(singular) {
            return singular.to_string();
        }
    }
    joined
}

fn parse_speed(words: &[&str]) -> Option<f64> {
    let pos = words.iter().position(|w| *w == "m/s" || *w == "mps")?;
    let v: f64 = words.get(pos.checked_sub(1)?)?.parse().ok()?;
    (v.is_finite() && v > 0.0).then_some(v)
}

/// Resolve a free-text place against node ids, labels and tags,
/// case-insensitively. Exact matches beat substring matches; within a tier
/// the lexicographically smallest node id wins.
pub fn resolve_place(place: &str, map: &TopoMap) -> Option<NodeId> {
    let place = normalize(place);
    if place.is_empty() {
        return None;
    }
    let names = |n: &crate::map::Node| -> Vec<String> {
        let mut v = vec![n.id.as_str().to_lowercase()];
        if let Some(l) = &n.label {
            v.push(normalize(l));
        }
        v.extend(n.tags.iter().map(|t| t.replace('_', " ")));
        v
    };
    let exact = map
        .nodes()
        .find(|n| names(n).iter().any(|s| *s == place || s.replace(' ', "_") == place));
    if let Some(n) = exact {
        return Some(n.id.clone());
    }
    map.nodes()
        .find(|n| {
            names(n)
                .iter()
                .any(|s| s.contains(&place) || (s.len() >= 3 && place.contains(s.as_str())))
        })
        .map(|n| n.id.clone())
}
