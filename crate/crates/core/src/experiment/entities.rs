//! Identifier extraction from generated answers.

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_' || c == b'$'
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_' || c == b'$'
}

/// Lower-to-upper transition (`setSize`) or an acronym run (`JFrame`, `SSLSocket`).
pub(crate) fn is_camel(s: &str) -> bool {
    let b = s.as_bytes();
    let transition = b.windows(2).any(|w| w[0].is_ascii_lowercase() && w[1].is_ascii_uppercase());
    let uppers = b.iter().filter(|c| c.is_ascii_uppercase()).count();
    let lowers = b.iter().any(|c| c.is_ascii_lowercase());
    transition || (uppers >= 2 && lowers)
}

pub(crate) fn is_upper_camel(s: &str) -> bool {
    s.as_bytes().first().is_some_and(|c| c.is_ascii_uppercase()) && is_camel(s)
}

fn is_constant(s: &str) -> bool {
    s.contains('_')
        && s.bytes().any(|c| c.is_ascii_uppercase())
        && s.bytes().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == b'_')
}

fn is_capitalized_word(s: &str) -> bool {
    let b = s.as_bytes();
    b[0].is_ascii_uppercase() && b[1..].iter().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

fn is_package_segment(s: &str) -> bool {
    s.bytes().all(|c| c.is_ascii_lowercase())
}

struct Chain<'a> {
    segments: Vec<&'a str>,
    followed_by_paren: bool,
    sentence_initial: bool,
    in_code: bool,
}

/// Byte ranges of fenced code blocks.
fn code_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut open = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim_end() == "```" || line.trim_start().starts_with("```") {
            match open.take() {
                Some(start) => ranges.push((start, offset)),
                None => open = Some(offset + line.len()),
            }
        }
        offset += line.len();
    }
    if let Some(start) = open {
        ranges.push((start, text.len()));
    }
    ranges
}

fn chains(text: &str) -> Vec<Chain<'_>> {
    let b = text.as_bytes();
    let code = code_ranges(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if !is_ident_char(b[i]) {
            i += 1;
            continue;
        }
        if !is_ident_start(b[i]) {
            while i < b.len() && is_ident_char(b[i]) {
                i += 1;
            }
            continue;
        }
        let start = i;
        let mut segments = Vec::new();
        loop {
            let s = i;
            while i < b.len() && is_ident_char(b[i]) {
                i += 1;
            }
            segments.push(&text[s..i]);
            if i + 1 < b.len() && b[i] == b'.' && is_ident_start(b[i + 1]) {
                i += 1;
            } else {
                break;
            }
        }
        let mut j = i;
        while j < b.len() && (b[j] == b' ' || b[j] == b'\t') {
            j += 1;
        }
        let followed_by_paren = j < b.len() && b[j] == b'(';
        let before = text[..start].trim_end_matches([' ', '\t']);
        let sentence_initial = before.is_empty() || before.ends_with(['.', '!', '?', ':', '\n']);
        let in_code = code.iter().any(|&(s, e)| start >= s && start < e);
        out.push(Chain { segments, followed_by_paren, sentence_initial, in_code });
    }
    out
}

fn single_is_identifier(seg: &str, chain: &Chain<'_>) -> bool {
    if seg.len() < 2 {
        return false;
    }
    if chain.followed_by_paren || is_camel(seg) || is_constant(seg) {
        return true;
    }
    is_capitalized_word(seg) && (chain.in_code || !chain.sentence_initial)
}

/// Candidate code identifiers in order of first occurrence, without duplicates.
///
/// A token counts when it is camel-case, an upper-case constant, followed by
/// `(`, part of a dotted chain, or a capitalized word that does not open a
/// sentence. Package-qualified names (`javax.swing.JFrame`) are kept whole.
pub fn extract_entities(answer: &str) -> Vec<String> {
    let mut found: Vec<String> = Vec::new();
    let mut push = |s: &str| {
        if !found.iter().any(|f| f == s) {
            found.push(s.to_string());
        }
    };
    for chain in chains(answer) {
        let segs = &chain.segments;
        if segs.len() == 1 {
            if single_is_identifier(segs[0], &chain) {
                push(segs[0]);
            }
            continue;
        }
        let class_at = segs.iter().position(|s| s.as_bytes()[0].is_ascii_uppercase());
        let rest = match class_at {
            Some(k) if k >= 1 && segs[..k].iter().all(|s| is_package_segment(s)) => {
                push(&segs[..=k].join("."));
                &segs[k + 1..]
            }
            _ => &segs[..],
        };
        for s in rest.iter().filter(|s| s.len() >= 2) {
            push(s);
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_call_splits() {
        assert_eq!(extract_entities("use DriverManager.getConnection()"), ["DriverManager", "getConnection"]);
    }

    #[test]
    fn plain_prose_has_none() {
        assert!(extract_entities("open a window").is_empty());
        assert!(extract_entities("Open a window. Then close it!").is_empty());
    }

    #[test]
    fn constants_and_calls() {
        let e = extract_entities("mainFrame.setDefaultCloseOperation(WindowConstants.EXIT_ON_CLOSE);");
        assert_eq!(e, ["mainFrame", "setDefaultCloseOperation", "WindowConstants", "EXIT_ON_CLOSE"]);
    }

    #[test]
    fn qualified_names_stay_whole() {
        assert_eq!(extract_entities("try javax.swing.WindowBuilder."), ["javax.swing.WindowBuilder"]);
        assert_eq!(extract_entities("java.util.List.add(x)"), ["java.util.List", "add"]);
    }

    #[test]
    fn capitalized_words_depend_on_position() {
        assert_eq!(extract_entities("You need a Connection here"), ["Connection"]);
        assert!(extract_entities("Connection is hard.").is_empty());
        assert_eq!(extract_entities("```\nConnection c = null;\n```"), ["Connection"]);
        assert_eq!(extract_entities("paintComponent (Graphics g)"), ["paintComponent", "Graphics"]);
    }

    #[test]
    fn digits_and_single_letters_are_ignored() {
        assert!(extract_entities("3rd x.y a(").is_empty());
    }

    #[test]
    fn duplicates_collapse_in_first_seen_order() {
        assert_eq!(extract_entities("setSize then JFrame then setSize"), ["setSize", "JFrame"]);
    }
}
