//! Tolerant extraction of the tagged reply format.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseTurnError {
    #[error("missing <RESPONSE> block")]
    MissingResponse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTurn {
    pub inner_thought: String,
    pub response: String,
    /// Set when the reply carried no INNER_THOUGHT block; usable, but the
    /// caller records a warning.
    pub inner_thought_missing: bool,
}

pub(crate) fn first_block(raw: &str, tag: &str) -> Option<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = raw.find(&open)? + open.len();
    let end = raw[start..].find(&close)? + start;
    Some(raw[start..end].trim().to_string())
}

/// Extracts the first well-formed INNER_THOUGHT and RESPONSE blocks,
/// ignoring any surrounding text. A missing RESPONSE is a parse failure
/// (retriable upstream); a missing INNER_THOUGHT degrades to an empty
/// private channel.
pub fn parse_agent_turn(raw: &str) -> Result<ParsedTurn, ParseTurnError> {
    let response = first_block(raw, "RESPONSE").ok_or(ParseTurnError::MissingResponse)?;
    match first_block(raw, "INNER_THOUGHT") {
        Some(inner_thought) => Ok(ParsedTurn {
            inner_thought,
            response,
            inner_thought_missing: false,
        }),
        None => Ok(ParsedTurn {
            inner_thought: String::new(),
            response,
            inner_thought_missing: true,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_reply_parses_both_blocks() {
        let parsed =
            parse_agent_turn("<INNER_THOUGHT>a</INNER_THOUGHT><RESPONSE>b</RESPONSE>").unwrap();
        assert_eq!(parsed.inner_thought, "a");
        assert_eq!(parsed.response, "b");
        assert!(!parsed.inner_thought_missing);
    }

    #[test]
    fn missing_inner_thought_degrades_with_flag() {
        let parsed = parse_agent_turn("<RESPONSE>hi</RESPONSE>").unwrap();
        assert_eq!(parsed.inner_thought, "");
        assert_eq!(parsed.response, "hi");
        assert!(parsed.inner_thought_missing);
    }

    #[test]
    fn tagless_text_is_a_parse_error() {
        assert_eq!(
            parse_agent_turn("no tags at all"),
            Err(ParseTurnError::MissingResponse)
        );
    }

    #[test]
    fn first_well_formed_block_wins_and_noise_is_ignored() {
        let raw = "preamble <INNER_THOUGHT>one</INNER_THOUGHT> chatter \
                   <RESPONSE>first</RESPONSE> <RESPONSE>second</RESPONSE> trailer";
        let parsed = parse_agent_turn(raw).unwrap();
        assert_eq!(parsed.inner_thought, "one");
        assert_eq!(parsed.response, "first");
    }

    #[test]
    fn unterminated_response_is_a_parse_error() {
        assert_eq!(
            parse_agent_turn("<RESPONSE>never closed"),
            Err(ParseTurnError::MissingResponse)
        );
    }
}
