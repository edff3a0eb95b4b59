//! Unsafe-pattern scan run on workflow source before execution. Matches are
//! reported and logged; the source is never rewritten.

use std::sync::OnceLock;

use regex::Regex;

const PATTERNS: &[(&str, &str)] = &[
    ("subprocess", r"\bimport\s+subprocess\b|\bfrom\s+subprocess\b"),
    ("os-exec", r"\bos\.(system|popen|exec\w*|spawn\w*|fork)\s*\("),
    ("file-delete", r"\b(shutil\.rmtree|os\.remove|os\.unlink|os\.rmdir)\s*\("),
    ("network", r"\bimport\s+(socket|urllib|requests|http)\b|\bfrom\s+(socket|urllib|requests|http)\b"),
    ("dynamic-import", r"\b__import__\s*\(|\bimportlib\b"),
    ("dynamic-eval", r"(^|[^\w.])(eval|exec)\s*\("),
    ("ctypes", r"\bctypes\b"),
];

fn compiled() -> &'static [(&'static str, Regex)] {
    static SET: OnceLock<Vec<(&'static str, Regex)>> = OnceLock::new();
    SET.get_or_init(|| {
        PATTERNS
            .iter()
            .map(|(label, re)| (*label, Regex::new(&format!("(?m){re}")).expect("valid pattern")))
            .collect()
    })
}

/// Labels of every denylisted pattern occurring in `source`, in table order.
pub fn scan(source: &str) -> Vec<String> {
    compiled()
        .iter()
        .filter(|(_, re)| re.is_match(source))
        .map(|(label, _)| label.to_string())
        .collect()
}
