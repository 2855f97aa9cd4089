use std::sync::OnceLock;

use regex::Regex;

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:[a-z][a-z0-9+.\-]*://|www\.)\S*").expect("valid regex"))
}

fn handle_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").expect("valid regex"))
}

/// Replace user handles with `<user>`, drop URLs and collapse whitespace.
///
/// URLs are removed before handles are rewritten so that `user@host` inside a
/// link never leaves a stray `<user>` behind. The result is idempotent.
pub fn anonymize(text: &str) -> String {
    let without_urls = url_pattern().replace_all(text, " ");
    let without_handles = handle_pattern().replace_all(&without_urls, "<user>");
    without_handles.split_whitespace().collect::<Vec<_>>().join(" ")
}
