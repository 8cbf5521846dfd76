//! Placeholder substitution for query and prompt templates.
//!
//! Placeholders are `{name}` where `name` is an identifier. Substitution is
//! exact and global: every occurrence is replaced with the bound string, no
//! other transformation. A placeholder without a binding is an error naming
//! the placeholder. Brace runs that are not identifiers (JSON examples in
//! prompt text, say) pass through untouched.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_-]*)\}").expect("placeholder regex"))
}

/// Substitute every `{name}` in `text` with `bindings[name]`.
pub fn render(text: &str, bindings: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for caps in placeholder_re().captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let name = caps.get(1).unwrap().as_str();
        let value = bindings
            .get(name)
            .ok_or_else(|| Error::MissingBinding {
                placeholder: name.to_string(),
            })?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// The placeholder names appearing in `text`, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for caps in placeholder_re().captures_iter(text) {
        let name = caps.get(1).unwrap().as_str().to_string();
        if !seen.contains(&name) {
            seen.push(name);
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn substitutes_exactly() {
        let got = render(
            "SELECT ?r WHERE { <{entity}> ?r ?o }",
            &bind(&[("entity", "E1")]),
        )
        .unwrap();
        assert_eq!(got, "SELECT ?r WHERE { <E1> ?r ?o }");
    }

    #[test]
    fn missing_binding_names_placeholder() {
        let err = render("ask {relation} now", &bind(&[("entity", "E1")])).unwrap_err();
        match err {
            Error::MissingBinding { placeholder } => assert_eq!(placeholder, "relation"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn substitutes_all_occurrences() {
        let got = render("{entity} and {entity}", &bind(&[("entity", "X")])).unwrap();
        assert_eq!(got, "X and X");
    }

    #[test]
    fn non_identifier_braces_pass_through() {
        let text = r#"reply as [{"id": "...", "score": 0.5}] for {question}"#;
        let got = render(text, &bind(&[("question", "Q")])).unwrap();
        assert_eq!(got, r#"reply as [{"id": "...", "score": 0.5}] for Q"#);
    }

    #[test]
    fn lists_placeholders_in_order() {
        assert_eq!(
            placeholders("{b} then {a} then {b}"),
            vec!["b".to_string(), "a".to_string()]
        );
    }
}
