//! Entity decoding and code-block extraction for post bodies.

use std::borrow::Cow;

/// Decodes the XML named entities, `&nbsp;`, and decimal/hex numeric
/// references. Anything else starting with `&` is kept verbatim.
pub fn decode_entities(s: &str) -> Cow<'_, str> {
    if !s.contains('&') {
        return Cow::Borrowed(s);
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        match decode_one(rest) {
            Some((c, used)) => {
                out.push(c);
                rest = &rest[used..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    Cow::Owned(out)
}

fn decode_one(s: &str) -> Option<(char, usize)> {
    // longest plausible reference is "&#x10FFFF;"
    let end = s.as_bytes()[..s.len().min(12)].iter().position(|&b| b == b';')?;
    let name = &s[1..end];
    let c = match name {
        "lt" => '<',
        "gt" => '>',
        "amp" => '&',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => '\u{a0}',
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse::<u32>().ok()?,
            };
            char::from_u32(code)?
        }
    };
    Some((c, end + 1))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub snippets: Vec<String>,
    /// Set when the markup was unbalanced and extraction was best-effort.
    pub warning: Option<String>,
}

fn find_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn is_code_open(body: &str, at: usize) -> bool {
    matches!(
        body.as_bytes().get(at + 5),
        Some(b'>') | Some(b' ') | Some(b'\t') | Some(b'\n') | Some(b'\r')
    )
}

/// Inner text of each `<code>` element (block or inline) in document order,
/// with nested tags removed and entities decoded once.
pub fn extract_snippets(body_html: &str) -> Extraction {
    let mut ex = Extraction::default();
    let mut pos = 0;
    while let Some(open) = find_ci(body_html, "<code", pos) {
        if !is_code_open(body_html, open) {
            pos = open + 5;
            continue;
        }
        let Some(gt) = body_html[open..].find('>').map(|i| open + i) else {
            ex.warning = Some(format!("unterminated <code> tag at byte {open}"));
            break;
        };
        let inner_start = gt + 1;
        let (inner_end, next) = match find_ci(body_html, "</code>", inner_start) {
            Some(close) => (close, close + 7),
            None => {
                ex.warning = Some(format!("unclosed <code> at byte {open}"));
                (body_html.len(), body_html.len())
            }
        };
        let inner = strip_tags(&body_html[inner_start..inner_end]);
        ex.snippets.push(decode_entities(&inner).into_owned());
        pos = next;
    }
    ex
}

fn strip_tags(s: &str) -> Cow<'_, str> {
    if !s.contains('<') {
        return Cow::Borrowed(s);
    }
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match (in_tag, c) {
            (false, '<') => in_tag = true,
            (true, '>') => in_tag = false,
            (false, c) => out.push(c),
            (true, _) => {}
        }
    }
    Cow::Owned(out)
}
