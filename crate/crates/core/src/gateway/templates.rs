use std::path::Path;

use thiserror::Error;

pub const DEFAULT_SYSTEM: &str = include_str!("../../templates/system.txt");
pub const DEFAULT_MAIN: &str = include_str!("../../templates/main.txt");
pub const DEFAULT_CORRECTION: &str = include_str!("../../templates/correction.txt");
pub const DEFAULT_HELPER_DOCS: &str = include_str!("../../templates/helper_docs.txt");

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template is missing placeholder {0}")]
    MissingPlaceholder(&'static str),
    #[error("cannot read template {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
}

/// The three meta-agent prompt templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub system: String,
    /// Placeholders: `[APIs]`, `[TASK]`, `[HISTORY]`.
    pub main: String,
    /// Placeholder: `[ERROR]`.
    pub correction: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            system: DEFAULT_SYSTEM.to_string(),
            main: DEFAULT_MAIN.to_string(),
            correction: DEFAULT_CORRECTION.to_string(),
        }
    }
}

impl Templates {
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| TemplateError::Read {
                path: path.display().to_string(),
                source,
            })
        };
        let t = Self {
            system: read("system.txt")?,
            main: read("main.txt")?,
            correction: read("correction.txt")?,
        };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), TemplateError> {
        for key in ["[APIs]", "[TASK]", "[HISTORY]"] {
            if !self.main.contains(key) {
                return Err(TemplateError::MissingPlaceholder(key));
            }
        }
        if !self.correction.contains("[ERROR]") {
            return Err(TemplateError::MissingPlaceholder("[ERROR]"));
        }
        Ok(())
    }
}

/// Single-pass placeholder substitution: text inserted for one placeholder is
/// never rescanned for others.
pub(crate) fn fill(
    template: &str,
    values: &[(&'static str, &str)],
) -> Result<String, TemplateError> {
    for (key, _) in values {
        if !template.contains(key) {
            return Err(TemplateError::MissingPlaceholder(key));
        }
    }
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while !rest.is_empty() {
        if rest.starts_with('[') {
            for (key, value) in values {
                if let Some(tail) = rest.strip_prefix(key) {
                    out.push_str(value);
                    rest = tail;
                    continue 'outer;
                }
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_all_placeholders() {
        Templates::default().check().unwrap();
        assert!(DEFAULT_SYSTEM.starts_with("You are an AI agent system improvement expert"));
        assert!(DEFAULT_CORRECTION.contains("DO NOT USE ANY TRY-EXCEPT BLOCKS"));
        assert!(DEFAULT_HELPER_DOCS.contains("agent.test_on_public_test"));
    }

    #[test]
    fn fill_is_single_pass() {
        let out = fill("A=[TASK] B=[HISTORY]", &[("[TASK]", "[HISTORY]"), ("[HISTORY]", "h")]).unwrap();
        assert_eq!(out, "A=[HISTORY] B=h");
    }

    #[test]
    fn fill_reports_missing_placeholder() {
        assert!(matches!(
            fill("no slots", &[("[TASK]", "x")]),
            Err(TemplateError::MissingPlaceholder("[TASK]"))
        ));
    }

    #[test]
    fn unrelated_brackets_survive() {
        let out = fill("[Your analysis here] [ERROR]", &[("[ERROR]", "boom")]).unwrap();
        assert_eq!(out, "[Your analysis here] boom");
    }
}
