//! Streaming post-dump reader and tagged-document assembly.
//!
//! Ingestion takes two passes over the dump: the first indexes the tag set of
//! every question, the second resolves each post to its thread's tags and
//! emits one [`TaggedDocument`] per post that still has code after the
//! snippet-length filter.

use std::collections::HashMap;
use std::io::{self, BufRead};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::correction::{filter_snippet_length, FilterConfig};
use crate::html::{decode_entities, extract_snippets};

pub const MAX_TAGS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("dump truncated at byte {offset}")]
    Truncated { offset: u64 },
    #[error("xml syntax error at byte {offset}: {message}")]
    Syntax { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostKind {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPost {
    pub post_id: u64,
    /// Equal to `post_id` for questions.
    pub thread_id: u64,
    pub body_html: String,
    pub score: i64,
    /// Entity-decoded tag attribute; questions only.
    pub tags_raw: Option<String>,
    pub kind: PostKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedDocument {
    pub id: u64,
    pub text: String,
    pub tags: Vec<String>,
    pub score: i64,
    pub snippet_count: usize,
}

/// Splits a tag attribute in either the `<a><b>` or `|a|b|` form.
pub fn parse_tags(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    let parts: Vec<&str> = if raw.starts_with('<') {
        raw.split(['<', '>']).collect()
    } else if raw.contains('|') {
        raw.split('|').collect()
    } else {
        raw.split_whitespace().collect()
    };
    let mut tags: Vec<String> = Vec::new();
    for p in parts {
        let p = p.trim();
        if !p.is_empty() && !tags.iter().any(|t| t == p) {
            tags.push(p.to_string());
        }
    }
    tags
}

/// Iterator over the `row` records of a post dump.
///
/// Records that cannot be interpreted as a question or answer are skipped and
/// counted; an XML syntax error or an unclosed root ends the stream with an
/// error carrying the byte offset.
pub struct PostStream<R> {
    reader: Reader<R>,
    buf: Vec<u8>,
    depth: usize,
    skipped: u64,
    done: bool,
}

/// Reads RawPosts in file order from a post dump.
pub fn parse_posts_stream<R: BufRead>(dump: R) -> PostStream<R> {
    PostStream {
        reader: Reader::from_reader(dump),
        buf: Vec::with_capacity(8 * 1024),
        depth: 0,
        skipped: 0,
        done: false,
    }
}

impl<R: BufRead> PostStream<R> {
    /// Malformed or non-question/answer rows seen so far.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn offset(&self) -> u64 {
        self.reader.buffer_position()
    }
}

fn attr_text(value: &[u8]) -> Option<String> {
    let s = std::str::from_utf8(value).ok()?;
    Some(decode_entities(s).into_owned())
}

fn parse_row(e: &BytesStart<'_>) -> Option<RawPost> {
    let mut id = None;
    let mut parent = None;
    let mut body = None;
    let mut score = None;
    let mut tags = None;
    let mut kind = None;
    for attr in e.attributes() {
        let attr = attr.ok()?;
        let value = attr_text(&attr.value)?;
        match attr.key.as_ref() {
            b"Id" => id = Some(value.parse::<u64>().ok()?),
            b"ParentId" => parent = Some(value.parse::<u64>().ok()?),
            b"Body" => body = Some(value),
            b"Score" => score = Some(value.parse::<i64>().ok()?),
            b"Tags" => tags = Some(value),
            b"PostTypeId" => kind = Some(value.parse::<u8>().ok()?),
            _ => {}
        }
    }
    let post_id = id?;
    let score = score?;
    let body_html = body.unwrap_or_default();
    match kind? {
        1 => Some(RawPost {
            post_id,
            thread_id: post_id,
            body_html,
            score,
            tags_raw: tags,
            kind: PostKind::Question,
        }),
        2 => Some(RawPost {
            post_id,
            thread_id: parent?,
            body_html,
            score,
            tags_raw: None,
            kind: PostKind::Answer,
        }),
        _ => None,
    }
}

impl<R: BufRead> Iterator for PostStream<R> {
    type Item = Result<RawPost, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            let event = match self.reader.read_event_into(&mut self.buf) {
                Ok(ev) => ev,
                Err(err) => {
                    self.done = true;
                    let offset = self.offset();
                    return Some(Err(match err {
                        quick_xml::Error::Io(e) => IngestError::Io(io::Error::new(e.kind(), e.to_string())),
                        quick_xml::Error::Syntax(_) => IngestError::Truncated { offset },
                        other => IngestError::Syntax {
                            offset,
                            message: other.to_string(),
                        },
                    }));
                }
            };
            match event {
                Event::Empty(e) if e.name().as_ref() == b"row" => match parse_row(&e) {
                    Some(post) => return Some(Ok(post)),
                    None => self.skipped += 1,
                },
                Event::Start(e) => {
                    if e.name().as_ref() == b"row" {
                        match parse_row(&e) {
                            Some(post) => {
                                self.depth += 1;
                                return Some(Ok(post));
                            }
                            None => self.skipped += 1,
                        }
                    }
                    self.depth += 1;
                }
                Event::End(_) => self.depth = self.depth.saturating_sub(1),
                Event::Eof => {
                    self.done = true;
                    if self.depth > 0 {
                        return Some(Err(IngestError::Truncated { offset: self.offset() }));
                    }
                    return None;
                }
                _ => {}
            }
        }
    }
}

/// Tag set of every question, interned. Built in the first ingestion pass.
#[derive(Debug, Default, Clone)]
pub struct ThreadTagIndex {
    names: Vec<String>,
    ids: HashMap<String, u32>,
    threads: HashMap<u64, Box<[u32]>>,
}

impl ThreadTagIndex {
    pub fn insert(&mut self, thread_id: u64, tags: &[String]) {
        let ids = tags
            .iter()
            .map(|t| {
                if let Some(&id) = self.ids.get(t) {
                    return id;
                }
                let id = self.names.len() as u32;
                self.names.push(t.clone());
                self.ids.insert(t.clone(), id);
                id
            })
            .collect();
        self.threads.insert(thread_id, ids);
    }

    /// Indexes questions from a post stream; answers are ignored. Questions
    /// with no tags or more than [`MAX_TAGS`] are not indexed.
    pub fn build<I>(posts: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = Result<RawPost, IngestError>>,
    {
        let mut index = Self::default();
        for post in posts {
            let post = post?;
            if post.kind != PostKind::Question {
                continue;
            }
            let tags = parse_tags(post.tags_raw.as_deref().unwrap_or(""));
            if !tags.is_empty() && tags.len() <= MAX_TAGS {
                index.insert(post.thread_id, &tags);
            }
        }
        Ok(index)
    }

    pub fn tags(&self, thread_id: u64) -> Option<Vec<String>> {
        self.threads
            .get(&thread_id)
            .map(|ids| ids.iter().map(|&i| self.names[i as usize].clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.threads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threads.is_empty()
    }
}

/// Attaches thread tags to posts, dropping (and counting) posts whose
/// thread question is not in the index.
pub struct AssignThreadTags<'a, I> {
    posts: I,
    index: &'a ThreadTagIndex,
    dropped: u64,
}

pub fn assign_thread_tags<I>(posts: I, index: &ThreadTagIndex) -> AssignThreadTags<'_, I::IntoIter>
where
    I: IntoIterator<Item = RawPost>,
{
    AssignThreadTags {
        posts: posts.into_iter(),
        index,
        dropped: 0,
    }
}

impl<I> AssignThreadTags<'_, I> {
    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

impl<I: Iterator<Item = RawPost>> Iterator for AssignThreadTags<'_, I> {
    type Item = (RawPost, Vec<String>);

    fn next(&mut self) -> Option<Self::Item> {
        for post in self.posts.by_ref() {
            match self.index.tags(post.thread_id) {
                Some(tags) => return Some((post, tags)),
                None => self.dropped += 1,
            }
        }
        None
    }
}

/// Joins surviving snippets with single newlines. `None` for an empty list.
pub fn concatenate_post(snippets: Vec<String>, post: &RawPost, tags: Vec<String>) -> Option<TaggedDocument> {
    if snippets.is_empty() {
        return None;
    }
    Some(TaggedDocument {
        id: post.post_id,
        snippet_count: snippets.len(),
        text: snippets.join("\n"),
        tags,
        score: post.score,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub posts_read: u64,
    pub skipped_records: u64,
    pub orphaned_posts: u64,
    pub posts_without_code: u64,
    pub posts_with_only_short_snippets: u64,
    pub documents: u64,
    pub markup_warnings: u64,
}

/// Two-pass ingestion. `open` is called once per pass and must yield the
/// same bytes each time. Every raw snippet (before the length filter) is
/// passed to `on_snippet`, for corpus statistics.
pub fn ingest<R, O, S, D>(
    mut open: O,
    cfg: &FilterConfig,
    mut on_snippet: S,
    mut sink: D,
) -> Result<IngestReport, IngestError>
where
    R: BufRead,
    O: FnMut() -> io::Result<R>,
    S: FnMut(&str),
    D: FnMut(TaggedDocument) -> io::Result<()>,
{
    let index = ThreadTagIndex::build(parse_posts_stream(open()?))?;
    let mut report = IngestReport::default();
    let mut stream = parse_posts_stream(open()?);
    for post in stream.by_ref() {
        let post = post?;
        report.posts_read += 1;
        let Some(tags) = index.tags(post.thread_id) else {
            report.orphaned_posts += 1;
            continue;
        };
        let extraction = extract_snippets(&post.body_html);
        if extraction.warning.is_some() {
            report.markup_warnings += 1;
        }
        if extraction.snippets.is_empty() {
            report.posts_without_code += 1;
            continue;
        }
        extraction.snippets.iter().for_each(|s| on_snippet(s));
        let kept = filter_snippet_length(extraction.snippets, cfg);
        match concatenate_post(kept, &post, tags) {
            Some(doc) => {
                report.documents += 1;
                sink(doc)?;
            }
            None => report.posts_with_only_short_snippets += 1,
        }
    }
    report.skipped_records = stream.skipped();
    Ok(report)
}
