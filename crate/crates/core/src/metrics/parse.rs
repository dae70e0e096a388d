use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Normalize an item: trim, lowercase and collapse internal whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A set of normalized items parsed from a model output or a gold output.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredItems {
    items: BTreeSet<String>,
    /// Fragments that could not be parsed and were dropped.
    pub dropped: usize,
}

impl StructuredItems {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert after normalization. Empty items are ignored.
    pub fn insert(&mut self, item: &str) -> bool {
        let n = normalize(item);
        !n.is_empty() && self.items.insert(n)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: &str) -> bool {
        self.items.contains(&normalize(item))
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }

    pub fn intersection_len(&self, other: &StructuredItems) -> usize {
        self.items.intersection(&other.items).count()
    }
}

impl<S: AsRef<str>> FromIterator<S> for StructuredItems {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut out = StructuredItems::new();
        for s in iter {
            out.insert(s.as_ref());
        }
        out
    }
}

/// Task codes whose whole output is a single label.
const LABEL_TASKS: &[&str] = &["ETRE", "ECRE", "ESRE", "LI", "TC", "FRE"];

pub fn is_label_task(task_code: &str) -> bool {
    LABEL_TASKS.contains(&task_code)
}

fn open_bracket(c: char) -> bool {
    c == '<' || c == '⟨'
}

fn close_bracket(c: char) -> bool {
    c == '>' || c == '⟩'
}

/// Parse `⟨a, r, b⟩` (or `<a, r, b>`) into its canonical form.
fn parse_tuple(fragment: &str) -> Option<String> {
    let mut chars = fragment.chars();
    let first = chars.next()?;
    let last = chars.next_back()?;
    if !open_bracket(first) || !close_bracket(last) {
        return None;
    }
    let inner = &fragment[first.len_utf8()..fragment.len() - last.len_utf8()];
    let parts: Vec<String> = inner.split(',').map(normalize).collect();
    if parts.len() != 3 || parts.iter().any(String::is_empty) {
        return None;
    }
    if parts.iter().any(|p| p.chars().any(|c| open_bracket(c) || close_bracket(c))) {
        return None;
    }
    Some(format!("⟨{}⟩", parts.join(", ")))
}

/// Parse a model or gold output into comparable items.
///
/// Label tasks treat the whole normalized string as one item. Extraction
/// tasks split on `;` and accept triples or bare labels; fragments that open
/// a bracket but do not form a triple are dropped and counted.
pub fn parse_structured(text: &str, task_code: &str) -> StructuredItems {
    let mut items = StructuredItems::new();
    if is_label_task(task_code) {
        items.insert(text);
        return items;
    }
    for fragment in text.split(';') {
        let fragment = fragment.trim();
        if fragment.is_empty() {
            continue;
        }
        let starts = fragment.chars().next().is_some_and(open_bracket);
        let ends = fragment.chars().next_back().is_some_and(close_bracket);
        if starts || ends {
            match parse_tuple(fragment) {
                Some(t) => {
                    items.items.insert(t);
                }
                None => items.dropped += 1,
            }
        } else {
            items.insert(fragment);
        }
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_triples() {
        let s = parse_structured("⟨alice, works_at, acme⟩; ⟨bob, knows, alice⟩", "SRE");
        assert_eq!(s.len(), 2);
        assert_eq!(s.dropped, 0);
    }

    #[test]
    fn single_label() {
        let s = parse_structured("BEFORE", "ETRE");
        assert_eq!(s.iter().collect::<Vec<_>>(), vec!["before"]);
        let s = parse_structured("  Before \n", "ETRE");
        assert!(s.contains("before"));
    }

    #[test]
    fn duplicates_collapse() {
        assert_eq!(parse_structured("⟨a, r, b⟩; ⟨a, r, b⟩", "SRE").len(), 1);
        assert_eq!(parse_structured("<a, r, b>; ⟨A,  r , b⟩", "SRE").len(), 1);
    }

    #[test]
    fn malformed_fragments_are_counted() {
        let s = parse_structured("<a, r>; <a, r, b; ⟨x, y, z⟩; ; trigger", "SRE");
        assert_eq!(s.len(), 2);
        assert_eq!(s.dropped, 2);
        assert!(s.contains("trigger"));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  The\tCAT \n sat "), "the cat sat");
    }
}
