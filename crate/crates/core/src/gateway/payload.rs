//! Labeled-block layout for user messages.
//!
//! Pipeline stages compose their user messages from named blocks (PROBLEM,
//! PROMPT, CODE, ...): a label alone on a line opens a block that runs until
//! the next label. The layout keeps requests machine-readable for the
//! synthetic backend and for instrumentation without hurting a live model.

use std::collections::BTreeMap;

const LABELS: &[&str] = &[
    "PROBLEM", "SENTENCE", "KIND", "VARIATION", "PROMPT", "CODE", "STEPS", "OUTPUT", "ERRORS",
    "REWARD", "FEEDBACK", "RETRY",
];

/// Builds a user message out of labeled blocks, in insertion order.
#[derive(Debug, Default)]
pub struct PayloadBuilder {
    parts: Vec<(String, String)>,
}

impl PayloadBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn block(mut self, label: &str, content: impl AsRef<str>) -> Self {
        debug_assert!(LABELS.contains(&label), "unknown payload label {label}");
        self.parts.push((label.to_string(), content.as_ref().to_string()));
        self
    }

    pub fn build(self) -> String {
        let mut out = String::new();
        for (label, content) in &self.parts {
            out.push_str(label);
            out.push_str(":\n");
            out.push_str(content);
            if !content.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

/// Recovers labeled blocks from a message. Unlabeled leading text is ignored;
/// repeated labels keep the first occurrence.
pub fn parse_blocks(text: &str) -> BTreeMap<String, String> {
    let mut blocks: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let trimmed = line.trim_end();
        if let Some(label) = trimmed.strip_suffix(':') {
            if LABELS.contains(&label) {
                current = if blocks.contains_key(label) {
                    None
                } else {
                    blocks.insert(label.to_string(), Vec::new());
                    Some(label.to_string())
                };
                continue;
            }
        }
        if let Some(label) = &current {
            blocks.get_mut(label).unwrap().push(line);
        }
    }
    blocks
        .into_iter()
        .map(|(k, lines)| (k, lines.join("\n").trim_end().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_and_parse_round_trip() {
        let msg = PayloadBuilder::new()
            .block("PROBLEM", "minimize power")
            .block("PROMPT", "write the objective")
            .block("CODE", "x = 1\ny = 2")
            .build();
        let blocks = parse_blocks(&msg);
        assert_eq!(blocks["PROBLEM"], "minimize power");
        assert_eq!(blocks["PROMPT"], "write the objective");
        assert_eq!(blocks["CODE"], "x = 1\ny = 2");
    }

    #[test]
    fn non_label_colon_lines_stay_inside_blocks() {
        let msg = PayloadBuilder::new()
            .block("ERRORS", "NameError: name 'x' is not defined")
            .build();
        let blocks = parse_blocks(&msg);
        assert_eq!(blocks["ERRORS"], "NameError: name 'x' is not defined");
    }

    #[test]
    fn missing_block_is_absent() {
        let blocks = parse_blocks("PROMPT:\nhello\n");
        assert!(!blocks.contains_key("CODE"));
    }
}
