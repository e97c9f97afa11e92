//! Event data model and the line-oriented stream format.
//!
//! A stream file is UTF-8 text. The first line is a header
//!
//! ```text
//! #HOUSTON v1 n_nodes=<int> vocab=<int> n_events=<int>
//! ```
//!
//! and every following non-empty line that does not start with `#` is one
//! event: `<cascade_id> <node_id> <timestamp> <w:count>[,<w:count>]*`.
//! Events are globally sorted by non-decreasing timestamp.

use std::fmt;
use std::io::{self, BufRead, Write};

pub type NodeId = u32;
pub type WordId = u32;

const MAGIC: &str = "#HOUSTON";
const VERSION: &str = "v1";

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: node {node} out of range for a network of {n_nodes} nodes")]
    NodeOutOfRange { line: usize, node: NodeId, n_nodes: usize },
    #[error("line {line}: word {word} out of range for a vocabulary of {vocab} words")]
    WordOutOfRange { line: usize, word: WordId, vocab: usize },
    #[error("unsorted stream at line {line}")]
    Unsorted { line: usize },
    #[error("header declares {declared} events but the stream holds {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Sparse bag of words: sorted, unique word ids with counts of at least one.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct WordCounts(Vec<(WordId, u32)>);

impl WordCounts {
    /// Builds a bag from arbitrary `(word, count)` pairs. Zero counts are
    /// rejected, repeated word ids are rejected.
    pub fn new(mut pairs: Vec<(WordId, u32)>) -> Result<Self, String> {
        if pairs.is_empty() {
            return Err("empty document".into());
        }
        pairs.sort_unstable_by_key(|&(w, _)| w);
        for win in pairs.windows(2) {
            if win[0].0 == win[1].0 {
                return Err(format!("word {} listed twice", win[0].0));
            }
        }
        if let Some(&(w, _)) = pairs.iter().find(|&&(_, c)| c == 0) {
            return Err(format!("word {w} has a zero count"));
        }
        Ok(Self(pairs))
    }

    /// Builds a bag from a list of word draws (one entry per token).
    pub fn from_tokens(tokens: &[WordId]) -> Result<Self, String> {
        let mut sorted = tokens.to_vec();
        sorted.sort_unstable();
        let mut pairs: Vec<(WordId, u32)> = Vec::new();
        for w in sorted {
            match pairs.last_mut() {
                Some((last, c)) if *last == w => *c += 1,
                _ => pairs.push((w, 1)),
            }
        }
        Self::new(pairs)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (WordId, u32)> + '_ {
        self.0.iter().copied()
    }

    /// Number of distinct words.
    pub fn distinct(&self) -> usize {
        self.0.len()
    }

    /// Document length (sum of counts).
    pub fn total(&self) -> u64 {
        self.0.iter().map(|&(_, c)| u64::from(c)).sum()
    }

    pub fn max_word(&self) -> Option<WordId> {
        self.0.last().map(|&(w, _)| w)
    }
}

impl fmt::Display for WordCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (w, c)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{w}:{c}")?;
        }
        Ok(())
    }
}

/// One observation: a node publishing a document at a time, within a cascade.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub cascade_id: String,
    pub node: NodeId,
    pub timestamp: f64,
    pub words: WordCounts,
}

impl Event {
    pub fn new(cascade_id: impl Into<String>, node: NodeId, timestamp: f64, words: WordCounts) -> Self {
        Self { cascade_id: cascade_id.into(), node, timestamp, words }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub n_nodes: usize,
    pub vocab_size: usize,
    /// Declared event count; 0 means unknown.
    pub n_events: usize,
}

impl StreamHeader {
    pub fn new(n_nodes: usize, vocab_size: usize, n_events: usize) -> Self {
        Self { n_nodes, vocab_size, n_events }
    }

    fn validate(&self) -> Result<(), String> {
        if self.n_nodes == 0 {
            return Err("n_nodes must be at least 1".into());
        }
        if self.vocab_size == 0 {
            return Err("vocab must be at least 1".into());
        }
        Ok(())
    }
}

impl fmt::Display for StreamHeader {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{MAGIC} {VERSION} n_nodes={} vocab={} n_events={}",
            self.n_nodes, self.vocab_size, self.n_events
        )
    }
}

fn parse_header(line: &str) -> Result<StreamHeader, StreamError> {
    let bad = |msg: &str| StreamError::Malformed { line: 1, msg: msg.to_string() };
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(bad("missing #HOUSTON header"));
    }
    if parts.next() != Some(VERSION) {
        return Err(bad("unsupported stream version"));
    }
    let mut field = |key: &str| -> Result<usize, StreamError> {
        let tok = parts.next().ok_or_else(|| bad(&format!("missing {key}=")))?;
        let value = tok
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| bad(&format!("expected {key}=<int>, got {tok:?}")))?;
        value.parse().map_err(|_| bad(&format!("bad integer for {key}: {value:?}")))
    };
    let header = StreamHeader {
        n_nodes: field("n_nodes")?,
        vocab_size: field("vocab")?,
        n_events: field("n_events")?,
    };
    header.validate().map_err(|m| bad(&m))?;
    Ok(header)
}

fn parse_words(tok: &str) -> Result<WordCounts, String> {
    let mut pairs = Vec::new();
    for item in tok.split(',') {
        let (w, c) = item.split_once(':').ok_or_else(|| format!("bad word entry {item:?}"))?;
        let w: WordId = w.parse().map_err(|_| format!("bad word id {w:?}"))?;
        let c: u32 = c.parse().map_err(|_| format!("bad count {c:?}"))?;
        pairs.push((w, c));
    }
    WordCounts::new(pairs)
}

/// Lazy single-pass reader over the event lines of a stream.
pub struct EventReader<R> {
    lines: io::Lines<R>,
    header: StreamHeader,
    line_no: usize,
    last_time: f64,
    seen: usize,
    done: bool,
}

impl<R: BufRead> EventReader<R> {
    pub fn header(&self) -> StreamHeader {
        self.header
    }

    fn parse_event(&self, line: &str) -> Result<Event, StreamError> {
        let line_no = self.line_no;
        let bad = |msg: String| StreamError::Malformed { line: line_no, msg };
        let mut parts = line.split_whitespace();
        let (Some(cascade), Some(node), Some(time), Some(words), None) =
            (parts.next(), parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad("expected `<cascade> <node> <time> <w:c,...>`".into()));
        };
        let node: NodeId = node.parse().map_err(|_| bad(format!("bad node id {node:?}")))?;
        if node as usize >= self.header.n_nodes {
            return Err(StreamError::NodeOutOfRange { line: line_no, node, n_nodes: self.header.n_nodes });
        }
        let timestamp: f64 = time.parse().map_err(|_| bad(format!("bad timestamp {time:?}")))?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(bad(format!("timestamp must be finite and non-negative, got {time}")));
        }
        let words = parse_words(words).map_err(bad)?;
        if let Some(w) = words.max_word() {
            if w as usize >= self.header.vocab_size {
                return Err(StreamError::WordOutOfRange {
                    line: line_no,
                    word: w,
                    vocab: self.header.vocab_size,
                });
            }
        }
        Ok(Event { cascade_id: cascade.to_string(), node, timestamp, words })
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let line = match self.lines.next() {
                Some(Ok(line)) => line,
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
                None => {
                    self.done = true;
                    let declared = self.header.n_events;
                    if declared != 0 && declared != self.seen {
                        return Some(Err(StreamError::CountMismatch { declared, found: self.seen }));
                    }
                    return None;
                }
            };
            self.line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let event = match self.parse_event(trimmed) {
                Ok(e) => e,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            if event.timestamp < self.last_time {
                self.done = true;
                return Some(Err(StreamError::Unsorted { line: self.line_no }));
            }
            self.last_time = event.timestamp;
            self.seen += 1;
            return Some(Ok(event));
        }
    }
}

/// Parses the header and returns a lazy iterator over the events.
///
/// Line numbers in errors count from the header line (line 1).
pub fn read_stream<R: BufRead>(source: R) -> Result<(StreamHeader, EventReader<R>), StreamError> {
    let mut lines = source.lines();
    let first = match lines.next() {
        Some(line) => line?,
        None => return Err(StreamError::Malformed { line: 1, msg: "empty input, no header".into() }),
    };
    let header = parse_header(first.trim())?;
    let reader =
        EventReader { lines, header, line_no: 1, last_time: f64::NEG_INFINITY, seen: 0, done: false };
    Ok((header, reader))
}

/// Reads a whole stream into memory.
pub fn read_stream_all<R: BufRead>(source: R) -> Result<(StreamHeader, Vec<Event>), StreamError> {
    let (header, reader) = read_stream(source)?;
    let events = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, events))
}

fn check_event(header: &StreamHeader, e: &Event, index: usize) -> Result<(), StreamError> {
    let invalid = |msg: String| StreamError::InvalidEvent(format!("event {index}: {msg}"));
    if e.cascade_id.is_empty()
        || e.cascade_id.starts_with('#')
        || e.cascade_id.chars().any(char::is_whitespace)
    {
        return Err(invalid(format!("cascade id {:?} is not a single token", e.cascade_id)));
    }
    if e.node as usize >= header.n_nodes {
        return Err(invalid(format!("node {} >= n_nodes {}", e.node, header.n_nodes)));
    }
    if !e.timestamp.is_finite() || e.timestamp < 0.0 {
        return Err(invalid(format!("timestamp {} is not finite and non-negative", e.timestamp)));
    }
    match e.words.max_word() {
        None => return Err(invalid("empty document".into())),
        Some(w) if w as usize >= header.vocab_size => {
            return Err(invalid(format!("word {w} >= vocab {}", header.vocab_size)))
        }
        _ => {}
    }
    Ok(())
}

/// Writes a stream. Every event is validated before the first byte is
/// written, so an invalid input leaves the sink untouched.
///
/// Timestamps use the shortest decimal form that parses back to the same
/// `f64`, so reading the output reproduces the events exactly.
pub fn write_stream<W: Write>(header: &StreamHeader, events: &[Event], sink: W) -> Result<(), StreamError> {
    header.validate().map_err(|m| StreamError::InvalidEvent(format!("header: {m}")))?;
    if header.n_events != 0 && header.n_events != events.len() {
        return Err(StreamError::CountMismatch { declared: header.n_events, found: events.len() });
    }
    let mut last = f64::NEG_INFINITY;
    for (i, e) in events.iter().enumerate() {
        check_event(header, e, i)?;
        if e.timestamp < last {
            // header is line 1, event i sits on line i + 2
            return Err(StreamError::Unsorted { line: i + 2 });
        }
        last = e.timestamp;
    }
    let mut out = io::BufWriter::new(sink);
    writeln!(out, "{header}")?;
    for e in events {
        writeln!(out, "{} {} {} {}", e.cascade_id, e.node, e.timestamp, e.words)?;
    }
    out.flush()?;
    Ok(())
}
