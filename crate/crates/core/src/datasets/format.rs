//! Plain-text event-sequence files.
//!
//! ```text
//! #ctseq v1 task=<label-pred|polarity-pred|classification> vocab=<n>
//! <id> <task> <class> <label>,<time>[,<target>] <label>,<time>[,<target>] ...
//! ```
//!
//! One sequence per line, fields separated by single spaces. `class` is `0`
//! or `1` for classification and `-` otherwise. Each event is a comma
//! triple; the third element (`0`/`1`) is present only for polarity tasks.
//! Times are written with 17 significant digits, which round-trips every
//! 64-bit float. Blank lines and lines starting with `#` after the header
//! are ignored. An empty file reads as an empty label-prediction set.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::{Dataset, Event, EventSequence, Targets, Task};
use crate::error::{Error, Result};

pub const FORMAT_MAGIC: &str = "#ctseq v1";

pub fn write_sequences(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let out = sequences_to_string(data)?;
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// The file contents [`write_sequences`] would produce.
pub fn sequences_to_string(data: &Dataset) -> Result<String> {
    data.validate()?;
    let mut out = String::new();
    writeln!(
        out,
        "{FORMAT_MAGIC} task={} vocab={}",
        data.task.tag(),
        data.vocab
    )
    .unwrap();
    for s in &data.sequences {
        let class = match s.targets {
            Targets::Class(true) => "1",
            Targets::Class(false) => "0",
            _ => "-",
        };
        write!(out, "{} {} {}", s.id, data.task.tag(), class).unwrap();
        for (k, e) in s.events.iter().enumerate() {
            write!(out, " {},{:.16e}", e.label, e.time).unwrap();
            if let Targets::Polarity(bits) = &s.targets {
                write!(out, ",{}", u8::from(bits[k])).unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str) -> Result<(Task, usize)> {
    let rest = line
        .strip_prefix(FORMAT_MAGIC)
        .ok_or_else(|| parse_err(1, format!("expected header starting with `{FORMAT_MAGIC}`")))?;
    let mut task = None;
    let mut vocab = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("task", v)) => {
                task = Some(
                    Task::from_tag(v).ok_or_else(|| parse_err(1, format!("unknown task `{v}`")))?,
                )
            }
            Some(("vocab", v)) => {
                vocab = Some(
                    v.parse()
                        .map_err(|_| parse_err(1, format!("bad vocab `{v}`")))?,
                )
            }
            _ => return Err(parse_err(1, format!("unexpected header field `{field}`"))),
        }
    }
    Ok((
        task.ok_or_else(|| parse_err(1, "header lacks task="))?,
        vocab.ok_or_else(|| parse_err(1, "header lacks vocab="))?,
    ))
}

fn parse_record(line: &str, lineno: usize, task: Task) -> Result<EventSequence> {
    let mut fields = line.split(' ');
    let id = fields
        .next()
        .and_then(|f| f.parse::<u64>().ok())
        .ok_or_else(|| parse_err(lineno, "missing or bad sequence id"))?;
    let tag = fields
        .next()
        .ok_or_else(|| parse_err(lineno, "missing task tag"))?;
    if Task::from_tag(tag) != Some(task) {
        return Err(parse_err(
            lineno,
            format!("task tag `{tag}` does not match header"),
        ));
    }
    let class = fields
        .next()
        .ok_or_else(|| parse_err(lineno, "missing class field"))?;
    let class = match (task, class) {
        (Task::Classification, "0") => Some(false),
        (Task::Classification, "1") => Some(true),
        (Task::Classification, c) => return Err(parse_err(lineno, format!("bad class `{c}`"))),
        (_, "-") => None,
        (_, c) => {
            return Err(parse_err(
                lineno,
                format!("class `{c}` on a non-classification task"),
            ))
        }
    };
    let mut events = Vec::new();
    let mut bits = Vec::new();
    for (k, triple) in fields.enumerate() {
        let mut parts = triple.split(',');
        let label = parts
            .next()
            .and_then(|p| p.parse::<usize>().ok())
            .ok_or_else(|| parse_err(lineno, format!("event {k}: bad label in `{triple}`")))?;
        let time = parts
            .next()
            .and_then(|p| p.parse::<f64>().ok())
            .ok_or_else(|| parse_err(lineno, format!("event {k}: bad time in `{triple}`")))?;
        let target = parts.next();
        match (task, target) {
            (Task::PolarityPrediction, Some("0")) => bits.push(false),
            (Task::PolarityPrediction, Some("1")) => bits.push(true),
            (Task::PolarityPrediction, _) => {
                return Err(parse_err(
                    lineno,
                    format!("event {k}: missing or bad target in `{triple}`"),
                ))
            }
            (_, None) => {}
            (_, Some(_)) => {
                return Err(parse_err(
                    lineno,
                    format!("event {k}: unexpected target in `{triple}`"),
                ))
            }
        }
        if parts.next().is_some() {
            return Err(parse_err(
                lineno,
                format!("event {k}: too many fields in `{triple}`"),
            ));
        }
        events.push(Event::new(label, time));
    }
    if events.is_empty() {
        return Err(parse_err(lineno, "sequence has no events"));
    }
    let targets = match task {
        Task::LabelPrediction => Targets::NextLabel,
        Task::PolarityPrediction => Targets::Polarity(bits),
        Task::Classification => Targets::Class(class.expect("checked above")),
    };
    Ok(EventSequence {
        id,
        events,
        targets,
    })
}

pub fn read_sequences(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header = loop {
        match lines.next() {
            None => {
                return Ok(Dataset {
                    task: Task::LabelPrediction,
                    vocab: 0,
                    sequences: Vec::new(),
                })
            }
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((1, l)) => break l,
            Some((n, _)) => return Err(parse_err(n, "header must be the first line")),
        }
    };
    let (task, vocab) = parse_header(header)?;
    let mut sequences = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let seq = parse_record(line, lineno, task)?;
        seq.validate(vocab)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        sequences.push(seq);
    }
    Ok(Dataset {
        task,
        vocab,
        sequences,
    })
}
