//! Small HTML reader for well-formed documents.
//!
//! Builds a node tree tolerant of attribute order, quoting style, letter case
//! and whitespace. `script`/`style` bodies are raw text, void elements never
//! take children, entities are decoded in text and attribute values, and
//! elements still open at end of input are closed implicitly. An end tag with
//! no matching open element is an error.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HtmlError {
    #[error("unexpected end tag </{name}> at byte {offset}")]
    UnexpectedEndTag { name: String, offset: usize },
    #[error("unterminated markup at byte {offset}")]
    Unterminated { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Document,
    Element { name: String, attrs: Vec<(String, String)> },
    Text(String),
    Comment(String),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Parsed document; node 0 is the document root.
#[derive(Debug, Clone)]
pub struct Document {
    nodes: Vec<Node>,
}

const VOID: [&str; 14] = [
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source", "track", "wbr",
];
const RAW_TEXT: [&str; 2] = ["script", "style"];
const ESCAPABLE_RAW_TEXT: [&str; 2] = ["textarea", "title"];

impl Document {
    pub const ROOT: usize = 0;

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn element_name(&self, id: usize) -> Option<&str> {
        match &self.nodes[id].kind {
            NodeKind::Element { name, .. } => Some(name),
            _ => None,
        }
    }

    pub fn attr(&self, id: usize, attr: &str) -> Option<&str> {
        match &self.nodes[id].kind {
            NodeKind::Element { attrs, .. } => attrs.iter().find(|(k, _)| k == attr).map(|(_, v)| v.as_str()),
            _ => None,
        }
    }

    /// Descendants of `id` in document (pre-)order, excluding `id` itself.
    pub fn descendants(&self, id: usize) -> Descendants<'_> {
        let mut stack: Vec<usize> = self.nodes[id].children.clone();
        stack.reverse();
        Descendants { doc: self, stack }
    }

    pub fn child_elements<'a>(&'a self, id: usize, name: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.nodes[id]
            .children
            .iter()
            .copied()
            .filter(move |&c| self.element_name(c) == Some(name))
    }

    /// Elements named `name` anywhere in the document, in document order.
    pub fn elements_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.descendants(Self::ROOT)
            .filter(move |&c| self.element_name(c) == Some(name))
    }

    /// Concatenated text of all descendant text nodes.
    pub fn text_content(&self, id: usize) -> String {
        let mut out = String::new();
        if let NodeKind::Text(t) = &self.nodes[id].kind {
            out.push_str(t);
        }
        for d in self.descendants(id) {
            if let NodeKind::Text(t) = &self.nodes[d].kind {
                out.push_str(t);
            }
        }
        out
    }

    /// Evaluates `/step/step/...//target`: child steps from the root, then every
    /// descendant element named `target`, in document order.
    pub fn select(&self, child_path: &[&str], target: &str) -> Vec<usize> {
        let mut frontier = vec![Self::ROOT];
        for step in child_path {
            frontier = frontier
                .iter()
                .flat_map(|&n| self.child_elements(n, step).collect::<Vec<_>>())
                .collect();
        }
        let mut out = Vec::new();
        for n in frontier {
            out.extend(self.descendants(n).filter(|&d| self.element_name(d) == Some(target)));
        }
        out
    }

    fn push(&mut self, parent: usize, kind: NodeKind) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            kind,
            parent: Some(parent),
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        id
    }
}

pub struct Descendants<'a> {
    doc: &'a Document,
    stack: Vec<usize>,
}

impl Iterator for Descendants<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let id = self.stack.pop()?;
        self.stack.extend(self.doc.nodes[id].children.iter().rev().copied());
        Some(id)
    }
}

fn find_ci(hay: &str, needle: &str, from: usize) -> Option<usize> {
    let h = hay.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b':' | b'.')
}

/// Decodes the named and numeric character references a generated page uses.
pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let semi = tail.as_bytes().iter().take(12).position(|&b| b == b';');
        let decoded = semi.and_then(|end| {
            let name = &tail[1..end];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" | "#39" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ => {
                    if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                        u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
                    } else if let Some(dec) = name.strip_prefix('#') {
                        dec.parse::<u32>().ok().and_then(char::from_u32)
                    } else {
                        None
                    }
                }
            };
            ch.map(|c| (c, end + 1))
        });
        match decoded {
            Some((c, used)) => {
                out.push(c);
                rest = &tail[used..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Escapes text for use inside a double-quoted attribute or element body.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 8);
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

struct Tag {
    name: String,
    attrs: Vec<(String, String)>,
    self_closing: bool,
    end: usize,
}

fn parse_start_tag(input: &str, start: usize) -> Result<Tag, HtmlError> {
    let b = input.as_bytes();
    let mut i = start + 1;
    let name_start = i;
    while i < b.len() && is_name_byte(b[i]) {
        i += 1;
    }
    let name = input[name_start..i].to_ascii_lowercase();
    let mut attrs = Vec::new();
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= b.len() {
            return Err(HtmlError::Unterminated { offset: start });
        }
        match b[i] {
            b'>' => {
                return Ok(Tag {
                    name,
                    attrs,
                    self_closing: false,
                    end: i + 1,
                })
            }
            b'/' if b.get(i + 1) == Some(&b'>') => {
                return Ok(Tag {
                    name,
                    attrs,
                    self_closing: true,
                    end: i + 2,
                })
            }
            b'/' => {
                i += 1;
                continue;
            }
            _ => {}
        }
        let an_start = i;
        while i < b.len() && !b[i].is_ascii_whitespace() && !matches!(b[i], b'=' | b'>' | b'/') {
            i += 1;
        }
        let attr_name = input[an_start..i].to_ascii_lowercase();
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if i < b.len() && b[i] == b'=' {
            i += 1;
            while i < b.len() && b[i].is_ascii_whitespace() {
                i += 1;
            }
            match b.get(i) {
                Some(&q @ (b'"' | b'\'')) => {
                    let close = input[i + 1..]
                        .find(q as char)
                        .ok_or(HtmlError::Unterminated { offset: start })?;
                    value = decode_entities(&input[i + 1..i + 1 + close]);
                    i += close + 2;
                }
                Some(_) => {
                    let vs = i;
                    while i < b.len() && !b[i].is_ascii_whitespace() && b[i] != b'>' {
                        i += 1;
                    }
                    value = decode_entities(&input[vs..i]);
                }
                None => return Err(HtmlError::Unterminated { offset: start }),
            }
        }
        if !attr_name.is_empty() {
            attrs.push((attr_name, value));
        }
    }
}

pub fn parse(input: &str) -> Result<Document, HtmlError> {
    let mut doc = Document {
        nodes: vec![Node {
            kind: NodeKind::Document,
            parent: None,
            children: Vec::new(),
        }],
    };
    // open elements: (node id, name)
    let mut open: Vec<(usize, String)> = Vec::new();
    let b = input.as_bytes();
    let mut i = 0;
    let mut text_start = 0;

    macro_rules! current {
        () => {
            open.last().map(|(id, _)| *id).unwrap_or(Document::ROOT)
        };
    }
    macro_rules! flush_text {
        ($end:expr) => {
            if $end > text_start {
                let t = decode_entities(&input[text_start..$end]);
                let parent = current!();
                doc.push(parent, NodeKind::Text(t));
            }
        };
    }

    while i < b.len() {
        if b[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &input[i..];
        if let Some(body) = rest.strip_prefix("<!--") {
            flush_text!(i);
            let end = body.find("-->").ok_or(HtmlError::Unterminated { offset: i })?;
            let parent = current!();
            doc.push(parent, NodeKind::Comment(body[..end].to_string()));
            i += 4 + end + 3;
            text_start = i;
        } else if rest.starts_with("<!") || rest.starts_with("<?") {
            flush_text!(i);
            let end = rest.find('>').ok_or(HtmlError::Unterminated { offset: i })?;
            i += end + 1;
            text_start = i;
        } else if rest.starts_with("</") {
            flush_text!(i);
            let end = rest.find('>').ok_or(HtmlError::Unterminated { offset: i })?;
            let name = rest[2..end].trim().to_ascii_lowercase();
            match open.iter().rposition(|(_, n)| *n == name) {
                Some(pos) => open.truncate(pos),
                None => {
                    return Err(HtmlError::UnexpectedEndTag { name, offset: i });
                }
            }
            i += end + 1;
            text_start = i;
        } else if b.get(i + 1).is_some_and(u8::is_ascii_alphabetic) {
            flush_text!(i);
            let tag = parse_start_tag(input, i)?;
            let parent = current!();
            let id = doc.push(
                parent,
                NodeKind::Element {
                    name: tag.name.clone(),
                    attrs: tag.attrs,
                },
            );
            i = tag.end;
            let raw = RAW_TEXT.contains(&tag.name.as_str());
            let escapable = ESCAPABLE_RAW_TEXT.contains(&tag.name.as_str());
            if tag.self_closing || VOID.contains(&tag.name.as_str()) {
                // no children
            } else if raw || escapable {
                let mut close_pat = String::from("</");
                close_pat.push_str(&tag.name);
                let close = find_ci(input, &close_pat, i).unwrap_or(b.len());
                if close > i {
                    let body = &input[i..close];
                    let t = if escapable {
                        decode_entities(body)
                    } else {
                        body.to_string()
                    };
                    doc.push(id, NodeKind::Text(t));
                }
                i = match input[close..].find('>') {
                    Some(gt) => close + gt + 1,
                    None => b.len(),
                };
            } else {
                open.push((id, tag.name));
            }
            text_start = i;
        } else {
            // a bare '<' is text
            i += 1;
        }
    }
    flush_text!(b.len());
    Ok(doc)
}
