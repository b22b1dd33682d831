//! Prompt rendering and structured response parsing.
//!
//! A rendered prompt presents the intersection layout, the per-phase
//! observation counts, optional incident information, optional neighbor
//! messages, and the format instruction demanding a `<think>...</think>`
//! reasoning span followed by a `\boxed{ }` phase choice.

use super::AgentMessage;
use crate::net::{IntersectionId, Phase};
use crate::sim::Observation;
use std::fmt::Write as _;

/// System line of every prompt.
pub const SYSTEM_LINE: &str = "You are a helpful traffic control agent.";

/// Task description shared by every prompt.
pub const TASK_DESCRIPTION: &str = "The crossroad connects two roads: north-south and east-west, \
with the traffic light at their intersection. Each road is divided into two sections (e.g., north \
and south for the north-south road) and each section has two lanes: a through lane and a \
left-turn lane. Right turns are permitted at all times. Lanes are divided into segments by \
distance from the intersection; Segment 1 is nearest the stop line. Pick the signal phase to \
serve for the next period.";

/// Format instruction appended to every prompt.
pub const FORMAT_INSTRUCTION: &str = "You can only choose one of the signals listed above. You \
FIRST think about the reasoning process for your choice as an internal monologue and then \
provide the final answer. Your think process MUST BE put in <think>...</think> tags. The final \
choice MUST BE put in \\boxed{ }.";

/// A structured prompt; blocks concatenate in a fixed order and the format
/// instruction is always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system_line: String,
    pub task_description: String,
    pub observation_block: String,
    pub incident_block: Option<String>,
    pub messages_block: Option<String>,
    pub format_instruction: String,
}

impl Prompt {
    /// The full prompt text sent to a policy.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "System: {}", self.system_line);
        let _ = writeln!(out, "Task Description: {}", self.task_description);
        let _ = writeln!(out, "Structured Traffic Observation:");
        out.push_str(&self.observation_block);
        if let Some(incident) = &self.incident_block {
            let _ = writeln!(out, "Incident Information: {incident}");
        }
        if let Some(messages) = &self.messages_block {
            let _ = writeln!(out, "Messages:");
            out.push_str(messages);
        }
        let _ = write!(out, "Format Instruction: {}", self.format_instruction);
        out
    }
}

fn count_line(label: &str, names: [&str; 2], values: [u32; 2]) -> String {
    format!(
        "- {label}: {} ({}), {} ({}), {} (Total)\n",
        values[0],
        names[0],
        values[1],
        names[1],
        values[0] + values[1]
    )
}

/// Render the per-phase observation counts.
pub fn render_observation_block(obs: &Observation) -> String {
    let mut out = String::new();
    for (i, counts) in obs.phases.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "Signal: {}", counts.phase);
        let _ = writeln!(out, "Allowed lanes: {}", counts.phase.allowed_lanes_label());
        let names = [
            counts.lanes[0].approach.long_name(),
            counts.lanes[1].approach.long_name(),
        ];
        out.push_str(&count_line(
            "Early queued",
            names,
            [counts.lanes[0].early_queued, counts.lanes[1].early_queued],
        ));
        for s in 0..counts.lanes[0].segments.len() {
            out.push_str(&count_line(
                &format!("Segment {}", s + 1),
                names,
                [counts.lanes[0].segments[s], counts.lanes[1].segments[s]],
            ));
        }
    }
    out
}

/// Compass word for where `sender` sits relative to `recipient`.
fn relative_direction(sender: IntersectionId, recipient: IntersectionId) -> &'static str {
    if sender.row < recipient.row {
        "north"
    } else if sender.row > recipient.row {
        "south"
    } else if sender.col > recipient.col {
        "east"
    } else {
        "west"
    }
}

/// Render a prompt for one decision. The incident block is included only
/// when incident text is provided; inbox messages render one per line after
/// it.
pub fn render_prompt(
    obs: &Observation,
    incident: Option<&str>,
    inbox: &[AgentMessage],
) -> Prompt {
    let messages_block = if inbox.is_empty() {
        None
    } else {
        let mut out = String::new();
        for m in inbox {
            let _ = writeln!(
                out,
                "- From the nearby intersection to the {}: {}",
                relative_direction(m.sender, m.recipient),
                m.body
            );
        }
        Some(out)
    };
    Prompt {
        system_line: SYSTEM_LINE.to_string(),
        task_description: TASK_DESCRIPTION.to_string(),
        observation_block: render_observation_block(obs),
        incident_block: incident.map(|s| s.to_string()),
        messages_block,
        format_instruction: FORMAT_INSTRUCTION.to_string(),
    }
}

/// Parsed policy response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub reasoning: String,
    pub action: Option<Phase>,
    /// True iff exactly one well-formed think span precedes exactly one
    /// boxed answer naming a valid phase.
    pub format_ok: bool,
}

fn first_span<'a>(text: &'a str, open: &str, close: &str) -> Option<(usize, &'a str)> {
    let start = text.find(open)?;
    let rest = &text[start + open.len()..];
    let end = rest.find(close)?;
    Some((start, &rest[..end]))
}

/// Parse a raw response. Never fails: malformed input yields
/// `format_ok == false` and possibly no action.
pub fn parse_response(text: &str) -> ParsedResponse {
    let think = first_span(text, "<think>", "</think>");
    let reasoning = think.map(|(_, s)| s.trim().to_string()).unwrap_or_default();

    let boxed = first_span(text, "\\boxed{", "}");
    let action = boxed.and_then(|(_, token)| Phase::parse(token));

    let think_count = text.matches("<think>").count();
    let think_close_count = text.matches("</think>").count();
    let boxed_count = text.matches("\\boxed{").count();
    let ordered = match (think, boxed) {
        (Some((ts, span)), Some((bs, _))) => ts + "<think>".len() + span.len() < bs,
        _ => false,
    };
    let format_ok = think_count == 1
        && think_close_count == 1
        && boxed_count == 1
        && ordered
        && action.is_some();

    ParsedResponse {
        reasoning,
        action,
        format_ok,
    }
}

/// Render a well-formed answer string for `phase`; the inverse of
/// [`parse_response`] on the action component.
pub fn render_answer(phase: Phase, reasoning: &str) -> String {
    format!("<think>{reasoning}</think> \\boxed{{{phase}}}")
}

/// Optional free-form outgoing message embedded in a text-policy response as
/// `<message>...</message>`, truncated to the message body limit.
pub fn extract_message(text: &str) -> Option<String> {
    first_span(text, "<message>", "</message>")
        .map(|(_, s)| super::truncate_body(s.trim()))
        .filter(|s| !s.is_empty())
}
