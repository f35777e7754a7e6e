//! Trace files: one JSON event per line, in processing order.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::{EventKind, Timestamp, TraceEvent};
use crate::metrics::{apply_warmup, Metrics, MetricsConfig};

pub fn to_line(e: &TraceEvent) -> String {
    serde_json::to_string(e).expect("trace events serialize")
}

pub fn write_trace(path: &Path, events: &[TraceEvent]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in events {
        writeln!(w, "{}", to_line(e)).map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_line(line: &str) -> Result<TraceEvent> {
    serde_json::from_str(line).map_err(Error::parse)
}

/// Read a whole trace; any bad line is an error naming its line number.
pub fn read_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e = parse_line(&line).map_err(|e| match e {
            Error::Parse { column, message, .. } => Error::Parse { line: n + 1, column, message },
            other => other,
        })?;
        out.push(e);
    }
    Ok(out)
}

/// Recompute run metrics from a complete trace.
pub fn replay(events: &[TraceEvent], cfg: MetricsConfig) -> Metrics {
    apply_warmup(events, cfg)
}

/// Selection of trace lines by kind and time window (inclusive).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceFilter {
    pub kinds: Option<BTreeSet<EventKind>>,
    pub between: Option<(Timestamp, Timestamp)>,
}

impl TraceFilter {
    pub fn is_empty(&self) -> bool {
        self.kinds.is_none() && self.between.is_none()
    }

    pub fn matches(&self, e: &TraceEvent) -> bool {
        self.kinds.as_ref().map_or(true, |k| k.contains(&e.kind))
            && self.between.map_or(true, |(a, b)| e.t_us >= a && e.t_us <= b)
    }
}

/// Outcome of streaming a trace through a filter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterReport {
    pub written: u64,
    /// (1-based line number, parse message) for every skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Copy matching lines verbatim from `input` to `out`. Lines that do not
/// parse are skipped and reported.
pub fn filter_stream(input: impl BufRead, mut out: impl Write, filter: &TraceFilter) -> std::io::Result<FilterReport> {
    let mut report = FilterReport::default();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        match parse_line(&line) {
            Ok(e) => {
                if filter.matches(&e) {
                    writeln!(out, "{line}")?;
                    report.written += 1;
                }
            }
            Err(err) => report.skipped.push((n + 1, err.to_string())),
        }
    }
    out.flush()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::event::Detail;
    use crate::network::NodeId;

    fn sample() -> Vec<TraceEvent> {
        vec![
            TraceEvent::new(0, 0, EventKind::WarmupEnd).detail(Detail { vehicles: Some(2), ..Detail::default() }),
            TraceEvent::new(5, 1, EventKind::GroupAppears).node(NodeId(3)),
            TraceEvent::new(9, 2, EventKind::SimEnd),
        ]
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_trace(&p, &sample()).unwrap();
        assert_eq!(read_trace(&p).unwrap(), sample());
    }

    #[test]
    fn empty_filter_copies_bytes() {
        let text: String = sample().iter().map(|e| to_line(e) + "\n").collect();
        let mut out = Vec::new();
        let r = filter_stream(text.as_bytes(), &mut out, &TraceFilter::default()).unwrap();
        assert_eq!(r.written, 3);
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn filters_by_kind_and_window() {
        let text: String = sample().iter().map(|e| to_line(e) + "\n").collect();
        let f = TraceFilter { kinds: Some([EventKind::GroupAppears, EventKind::SimEnd].into()), between: Some((0, 6)) };
        let mut out = Vec::new();
        filter_stream(text.as_bytes(), &mut out, &f).unwrap();
        let lines: Vec<_> = String::from_utf8(out).unwrap().lines().map(str::to_owned).collect();
        assert_eq!(lines, vec![to_line(&sample()[1])]);
    }

    #[test]
    fn corrupt_lines_are_reported() {
        let text = format!("{}\nnot json\n{}\n", to_line(&sample()[0]), to_line(&sample()[2]));
        let mut out = Vec::new();
        let r = filter_stream(text.as_bytes(), &mut out, &TraceFilter::default()).unwrap();
        assert_eq!(r.written, 2);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].0, 2);
    }

    #[test]
    fn strict_reader_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        std::fs::write(&p, format!("{}\n{{\"t_us\": 1}}\n", to_line(&sample()[0]))).unwrap();
        match read_trace(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
