use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::{sort_events, Event};
use crate::error::{Error, Result};

/// Fraction of malformed lines tolerated before ingestion fails.
pub const MALFORMED_LINE_LIMIT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::invalid(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ingested {
    /// Sorted by `(user_id, timestamp)`.
    pub events: Vec<Event>,
    pub malformed: usize,
    /// Non-blank data lines seen (CSV header excluded).
    pub total_lines: usize,
    /// 1-based line number of the first malformed line, if any.
    pub first_malformed: Option<(usize, String)>,
}

#[derive(Deserialize)]
struct JsonRecord {
    user: String,
    ts: i64,
    app: String,
    #[serde(default)]
    sem: Vec<String>,
}

fn validated(user: String, ts: i64, app: String, sem: Vec<String>) -> std::result::Result<Event, String> {
    if ts < 0 {
        return Err(format!("negative timestamp {ts}"));
    }
    if app.is_empty() {
        return Err("empty app token".to_owned());
    }
    Ok(Event {
        user_id: user,
        timestamp: ts,
        app,
        semantic_chunks: sem,
    })
}

struct Tally {
    events: Vec<Event>,
    malformed: usize,
    total: usize,
    first: Option<(usize, String)>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            events: Vec::new(),
            malformed: 0,
            total: 0,
            first: None,
        }
    }

    fn push(&mut self, line: usize, parsed: std::result::Result<Event, String>) {
        self.total += 1;
        match parsed {
            Ok(e) => self.events.push(e),
            Err(msg) => {
                self.malformed += 1;
                self.first.get_or_insert((line, msg));
            }
        }
    }
}

/// Reads an event log.
///
/// Lines that fail to parse are counted. If more than 1% of lines are
/// malformed the whole file is rejected; otherwise the bad lines are dropped
/// with a warning and reported in [`Ingested::malformed`].
pub fn ingest(path: &Path, format: InputFormat) -> Result<Ingested> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let file = File::open(path)?;
    let tally = match format {
        InputFormat::Jsonl => read_jsonl(BufReader::new(file))?,
        InputFormat::Csv => read_csv(BufReader::new(file))?,
    };

    if tally.malformed as f64 > MALFORMED_LINE_LIMIT * tally.total as f64 {
        let (line, message) = tally.first.expect("malformed lines recorded");
        return Err(Error::Parse {
            line,
            message,
            malformed: tally.malformed,
            total: tally.total,
        });
    }
    if tally.events.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if tally.malformed > 0 {
        log::warn!(
            "{}: skipped {} malformed of {} lines",
            path.display(),
            tally.malformed,
            tally.total
        );
    }

    let mut events = tally.events;
    sort_events(&mut events);
    Ok(Ingested {
        events,
        malformed: tally.malformed,
        total_lines: tally.total,
        first_malformed: tally.first,
    })
}

fn read_jsonl(reader: impl BufRead) -> Result<Tally> {
    let mut tally = Tally::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<JsonRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| validated(r.user, r.ts, r.app, r.sem));
        tally.push(idx + 1, parsed);
    }
    Ok(tally)
}

fn read_csv(reader: impl BufRead) -> Result<Tally> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Fields)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            return Err(Error::Parse {
                line: 1,
                message: e.to_string(),
                malformed: 1,
                total: 1,
            })
        }
    };
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(user_col), Some(ts_col), Some(app_col)) = (column("user"), column("ts"), column("app")) else {
        if headers.is_empty() {
            return Ok(Tally::new());
        }
        return Err(Error::Parse {
            line: 1,
            message: "header must name user,ts,app[,sem]".to_owned(),
            malformed: 1,
            total: 1,
        });
    };
    let sem_col = column("sem");

    let mut tally = Tally::new();
    for record in rdr.records() {
        match record {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(str::is_empty) {
                    continue;
                }
                let parsed = (|| {
                    let field = |i: usize| rec.get(i).ok_or_else(|| format!("missing column {i}"));
                    let user = field(user_col)?.to_owned();
                    let ts = field(ts_col)?.parse::<i64>().map_err(|e| format!("bad ts: {e}"))?;
                    let app = field(app_col)?.to_owned();
                    let sem = sem_col
                        .and_then(|i| rec.get(i))
                        .map(|s| s.split_whitespace().map(str::to_owned).collect())
                        .unwrap_or_default();
                    validated(user, ts, app, sem)
                })();
                tally.push(line, parsed);
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                tally.push(line, Err(e.to_string()));
            }
        }
    }
    Ok(tally)
}
