//! Post body normalization: HTML in, plain text with fenced code out.
//!
//! `<pre>` blocks become fenced regions (a line of three backticks before and
//! after). Inline `<code>` keeps its text without fences. Every other known
//! tag is dropped; block-level tags leave a line break behind. Text that is
//! already fenced is passed through untouched, which makes the function a
//! fixpoint on its own output.

const FENCE: &str = "```";

const BLOCK_TAGS: &[&str] = &[
    "p", "div", "blockquote", "ul", "ol", "li", "h1", "h2", "h3", "h4", "h5", "h6", "table",
    "thead", "tbody", "tfoot", "tr", "td", "th", "hr", "br", "dl", "dt", "dd",
];

const INLINE_TAGS: &[&str] = &[
    "a", "abbr", "b", "big", "cite", "code", "del", "em", "i", "img", "ins", "kbd", "q", "s",
    "samp", "small", "span", "strike", "strong", "sub", "sup", "tt", "u", "var",
];

#[derive(Debug, PartialEq, Eq)]
enum Segment<'a> {
    Text(&'a str),
    Fenced(Vec<&'a str>),
}

/// Converts a post body to normalized plain text.
pub fn normalize_body(body_html: &str) -> String {
    let mut out = String::with_capacity(body_html.len());
    for segment in split_fences(body_html) {
        match segment {
            Segment::Text(text) => render_html(text, &mut out),
            Segment::Fenced(lines) => push_code(&mut out, &lines.join("\n")),
        }
    }
    tidy(&out)
}

/// Decodes entities and flattens whitespace into single spaces.
pub fn normalize_title(title: &str) -> String {
    let decoded = html_escape::decode_html_entities(title);
    decoded.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_fence_line(line: &str) -> bool {
    line.trim_end() == FENCE
}

/// Splits out regions that are already fenced; an unterminated fence is text.
fn split_fences(input: &str) -> Vec<Segment<'_>> {
    let mut segments = Vec::new();
    let mut text_start = 0;
    let mut offset = 0;
    let mut open: Option<(usize, Vec<&str>)> = None;

    for line in input.split_inclusive('\n') {
        let content = line.strip_suffix('\n').unwrap_or(line);
        let content = content.strip_suffix('\r').unwrap_or(content);
        let line_start = offset;
        offset += line.len();

        match open.as_mut() {
            None if is_fence_line(content) => open = Some((line_start, Vec::new())),
            None => {}
            Some((fence_start, lines)) => {
                if is_fence_line(content) {
                    if *fence_start > text_start {
                        segments.push(Segment::Text(&input[text_start..*fence_start]));
                    }
                    segments.push(Segment::Fenced(std::mem::take(lines)));
                    open = None;
                    text_start = offset;
                } else {
                    lines.push(content);
                }
            }
        }
    }
    if text_start < input.len() {
        segments.push(Segment::Text(&input[text_start..]));
    }
    segments
}

fn push_code(out: &mut String, code: &str) {
    if !out.is_empty() && !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(FENCE);
    out.push('\n');
    out.push_str(code);
    out.push('\n');
    out.push_str(FENCE);
    out.push('\n');
}

struct Tag {
    name: String,
    closing: bool,
    /// Byte length of the whole `<...>` construct.
    len: usize,
}

/// Recognizes a known HTML tag at the start of `s` (which begins with `<`).
fn parse_tag(s: &str) -> Option<Tag> {
    let bytes = s.as_bytes();
    let mut i = 1;
    let closing = bytes.get(i) == Some(&b'/');
    if closing {
        i += 1;
    }
    let name_start = i;
    while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
        i += 1;
    }
    if i == name_start {
        return None;
    }
    let name = s[name_start..i].to_ascii_lowercase();
    if name != "pre" && !BLOCK_TAGS.contains(&name.as_str()) && !INLINE_TAGS.contains(&name.as_str())
    {
        return None;
    }
    match bytes.get(i) {
        Some(b'>') | Some(b'/') => {}
        Some(c) if c.is_ascii_whitespace() => {}
        _ => return None,
    }
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        let c = bytes[i];
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == b'"' || c == b'\'' => quote = Some(c),
            None if c == b'>' => {
                return Some(Tag {
                    name,
                    closing,
                    len: i + 1,
                })
            }
            None => {}
        }
        i += 1;
    }
    None
}

fn comment_len(s: &str) -> Option<usize> {
    if !s.starts_with("<!--") {
        return None;
    }
    Some(s.find("-->").map(|end| end + 3).unwrap_or(s.len()))
}

fn push_decoded(out: &mut String, raw: &str) {
    out.push_str(&html_escape::decode_html_entities(raw));
}

/// Renders one HTML region into `out`.
fn render_html(html: &str, out: &mut String) {
    let mut text_start = 0;
    let mut i = 0;
    // Raw text of an open <pre> block, with inner tags removed.
    let mut pre: Option<String> = None;

    while let Some(rel) = html[i..].find('<') {
        let at = i + rel;
        let rest = &html[at..];
        let consumed = if let Some(len) = comment_len(rest) {
            Some((len, None))
        } else {
            parse_tag(rest).map(|tag| (tag.len, Some(tag)))
        };
        let Some((len, tag)) = consumed else {
            i = at + 1;
            continue;
        };

        let chunk = &html[text_start..at];
        match pre.as_mut() {
            Some(code) => code.push_str(chunk),
            None => push_decoded(out, chunk),
        }
        text_start = at + len;
        i = text_start;

        let Some(tag) = tag else { continue };
        if tag.name == "pre" {
            if tag.closing {
                if let Some(code) = pre.take() {
                    let decoded = html_escape::decode_html_entities(&code);
                    push_code(out, decoded.trim_matches(|c| c == '\n' || c == '\r'));
                }
            } else if pre.is_none() {
                pre = Some(String::new());
            }
        } else if pre.is_none() && BLOCK_TAGS.contains(&tag.name.as_str()) {
            out.push('\n');
        }
    }

    let tail = &html[text_start..];
    match pre.take() {
        // Unterminated <pre>: still fence what was captured.
        Some(mut code) => {
            code.push_str(tail);
            let decoded = html_escape::decode_html_entities(&code);
            push_code(out, decoded.trim_matches(|c| c == '\n' || c == '\r'));
        }
        None => push_decoded(out, tail),
    }
}

/// Trims trailing whitespace on prose lines, caps blank-line runs at two and
/// trims the whole text. Fenced lines are left alone.
fn tidy(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_fence = false;
    let mut blank_run = 0usize;
    for line in text.split('\n') {
        if in_fence {
            out.push_str(line);
            out.push('\n');
            if is_fence_line(line) {
                in_fence = false;
            }
            continue;
        }
        let line = line.trim_end();
        if line.is_empty() {
            blank_run += 1;
            if blank_run <= 2 {
                out.push('\n');
            }
            continue;
        }
        blank_run = 0;
        if is_fence_line(line) {
            in_fence = true;
        }
        out.push_str(line);
        out.push('\n');
    }
    out.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_code_is_unfenced() {
        assert_eq!(normalize_body("<p>use <code>setSize</code></p>"), "use setSize");
    }

    #[test]
    fn pre_code_is_fenced() {
        assert_eq!(
            normalize_body("<pre><code>int x = 1;</code></pre>"),
            "```\nint x = 1;\n```"
        );
    }

    #[test]
    fn entities_are_decoded() {
        assert_eq!(normalize_body("a &amp;&amp; b"), "a && b");
        assert_eq!(
            normalize_body("<pre><code>List&lt;String&gt; xs;\n</code></pre>"),
            "```\nList<String> xs;\n```"
        );
    }

    #[test]
    fn blank_line_runs_are_capped() {
        assert_eq!(normalize_body("a\n\n\n\n\n\nb"), "a\n\n\nb");
        assert_eq!(normalize_body("a\n\n\nb"), "a\n\n\nb");
    }

    #[test]
    fn paragraphs_and_code_mix() {
        let html = "<p>Try this:</p>\n\n<pre class=\"lang-java\"><code>JFrame f = new JFrame();\nf.setSize(10, 10);\n</code></pre>\n\n<p>Done &gt; ok</p>\n";
        let text = normalize_body(html);
        assert_eq!(
            text,
            "Try this:\n\n\n```\nJFrame f = new JFrame();\nf.setSize(10, 10);\n```\n\n\nDone > ok"
        );
        assert_eq!(normalize_body(&text), text);
    }

    #[test]
    fn unknown_angle_brackets_survive() {
        assert_eq!(normalize_body("if a <x and y> d"), "if a <x and y> d");
        assert_eq!(normalize_body("x < y"), "x < y");
    }

    #[test]
    fn malformed_html_is_best_effort() {
        assert_eq!(normalize_body("<p>open <b>bold"), "open bold");
        assert_eq!(normalize_body("<pre><code>never closed"), "```\nnever closed\n```");
        assert_eq!(normalize_body("<!-- c --><p>x</p>"), "x");
    }

    #[test]
    fn fenced_text_passes_through() {
        let text = "```\n<p>&amp;</p>\n```";
        assert_eq!(normalize_body(text), text);
    }

    #[test]
    fn title_whitespace() {
        assert_eq!(normalize_title("  How   to\nuse &quot;x&quot; "), "How to use \"x\"");
    }
}
