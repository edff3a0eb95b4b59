//! Markdown fenced code block scanning.
//!
//! Follows the CommonMark fence rules closely enough for model output: an
//! opening fence is three or more backticks or tildes indented by at most
//! three spaces; the block closes at a line holding a fence of the same
//! character that is at least as long. An unclosed block runs to the end of
//! the text.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    pub info: String,
    pub body: String,
    /// Byte offset of the opening fence line.
    pub start: usize,
    /// Byte offset just past the closing fence line (or end of text).
    pub end: usize,
    /// Byte range of the body within the scanned text.
    pub body_range: (usize, usize),
}

fn fence_of(line: &str) -> Option<(char, usize, &str)> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let ch = rest.chars().next()?;
    if ch != '`' && ch != '~' {
        return None;
    }
    let len = rest.chars().take_while(|&c| c == ch).count();
    if len < 3 {
        return None;
    }
    let info = &rest[len..];
    if ch == '`' && info.contains('`') {
        return None;
    }
    Some((ch, len, info.trim()))
}

pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    let mut open: Option<(char, usize, String, usize, usize)> = None;
    let mut offset = 0;
    for raw_line in text.split_inclusive('\n') {
        let line = raw_line.trim_end_matches(['\n', '\r']);
        let line_end = offset + raw_line.len();
        match &open {
            None => {
                if let Some((ch, len, info)) = fence_of(line) {
                    open = Some((ch, len, info.to_string(), offset, line_end));
                }
            }
            Some((ch, len, _, _, _)) => {
                let closes = fence_of(line)
                    .is_some_and(|(c, l, info)| c == *ch && l >= *len && info.is_empty());
                if closes {
                    let (_, _, info, start, body_start) = open.take().expect("open block");
                    blocks.push(FencedBlock {
                        info,
                        body: text[body_start..offset].to_string(),
                        start,
                        end: line_end,
                        body_range: (body_start, offset),
                    });
                }
            }
        }
        offset = line_end;
    }
    if let Some((_, _, info, start, body_start)) = open {
        let body_start = body_start.min(text.len());
        blocks.push(FencedBlock {
            info,
            body: text[body_start..].to_string(),
            start,
            end: text.len(),
            body_range: (body_start, text.len()),
        });
    }
    blocks
}

/// Returns whether `body` declares `def <name>(` on some line.
pub fn declares_function(body: &str, name: &str) -> bool {
    let needle = format!("def {name}(");
    body.lines().any(|l| l.trim_start().starts_with(&needle))
}

/// The last fenced block whose body declares `def <entry_point>(`.
pub fn last_block_defining<'a>(blocks: &'a [FencedBlock], entry_point: &str) -> Option<&'a FencedBlock> {
    blocks.iter().rev().find(|b| declares_function(&b.body, entry_point))
}

/// A backtick fence longer than any backtick run inside `body`.
pub fn fence_for(body: &str) -> String {
    let mut longest = 0;
    let mut run = 0;
    for c in body.chars() {
        if c == '`' {
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    "`".repeat((longest + 1).max(3))
}

/// Wraps `body` in a fence that cannot be closed early by its content.
pub fn fence_code(body: &str, info: &str) -> String {
    let fence = fence_for(body);
    let mut out = format!("{fence}{info}\n{body}");
    if !body.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&fence);
    out
}

/// Breaks up runs of three or more backticks/tildes so embedded text cannot
/// open or close a fence.
pub fn neutralize_fences(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '`' || c == '~' {
            let mut j = i;
            while j < chars.len() && chars[j] == c {
                j += 1;
            }
            let run = j - i;
            if run >= 3 {
                let sub = if c == '`' { '\'' } else { '-' };
                out.extend(std::iter::repeat_n(sub, run));
            } else {
                out.extend(std::iter::repeat_n(c, run));
            }
            i = j;
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block() {
        let t = "intro\n```python\ndef f():\n    pass\n```\noutro";
        let b = fenced_blocks(t);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].info, "python");
        assert_eq!(b[0].body, "def f():\n    pass\n");
        assert_eq!(&t[..b[0].start], "intro\n");
    }

    #[test]
    fn longer_fence_contains_short_fences() {
        let t = "````\nx = '```'\n```\nstill inside\n````\n";
        let b = fenced_blocks(t);
        assert_eq!(b.len(), 1);
        assert!(b[0].body.contains("still inside"));
    }

    #[test]
    fn unclosed_block_runs_to_end() {
        let b = fenced_blocks("a\n```\ndef workflow(agent, task):\n  pass");
        assert_eq!(b.len(), 1);
        assert!(b[0].body.ends_with("pass"));
    }

    #[test]
    fn tilde_fence_not_closed_by_backticks() {
        let b = fenced_blocks("~~~\n```\n~~~\n");
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].body, "```\n");
    }

    #[test]
    fn fence_for_exceeds_inner_runs() {
        assert_eq!(fence_for("plain"), "```");
        assert_eq!(fence_for("s = '````'"), "`````");
        let wrapped = fence_code("a = '```'\n", "python");
        let b = fenced_blocks(&wrapped);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].body, "a = '```'\n");
    }

    #[test]
    fn neutralize_breaks_fences() {
        let n = neutralize_fences("error near ```python\ncode\n```");
        assert!(fenced_blocks(&n).is_empty());
        assert_eq!(neutralize_fences("a `b` c"), "a `b` c");
    }
}
