//! Scripted pointwise scorer speaking the line protocol on stdin/stdout.
//!
//! Modes:
//!   constant:N     every document scores N
//!   oracle:QRELS   4 for judged-relevant documents, 0 otherwise
//!   malformed:N    every N-th response is malformed, the rest score 4
//!   stall:N        every N-th request gets no response, the rest score 4
//!   crash:N        exit after N responses

use std::io::{self, BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use setcomp::rerank::ScoreRequest;
use setcomp::trec::Qrels;

enum Mode {
    Constant(i64),
    Oracle(Qrels),
    Malformed(usize),
    Stall(usize),
    Crash(usize),
}

fn parse_mode(s: &str) -> Result<Mode> {
    let (name, arg) = s.split_once(':').context("mode must be NAME:ARG")?;
    Ok(match name {
        "constant" => Mode::Constant(arg.parse()?),
        "oracle" => Mode::Oracle(Qrels::read(Path::new(arg))?),
        "malformed" => Mode::Malformed(arg.parse()?),
        "stall" => Mode::Stall(arg.parse()?),
        "crash" => Mode::Crash(arg.parse()?),
        _ => bail!("unknown mode {name}"),
    })
}

const MALFORMED: [&str; 4] = ["not json", "four", "7", "2.5"];

fn main() -> Result<()> {
    let arg = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "constant:4".into());
    let mode = parse_mode(&arg)?;
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for (i, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: ScoreRequest = serde_json::from_str(&line)?;
        let n = i + 1;
        let reply = |score: serde_json::Value| {
            json!({"qid": req.qid, "docid": req.docid, "score": score}).to_string()
        };
        let resp = match &mode {
            Mode::Constant(s) => reply(json!(s)),
            Mode::Oracle(qrels) => {
                let rel = qrels.get(&req.qid).is_some_and(|g| g.contains(&req.docid));
                reply(json!(if rel { 4 } else { 0 }))
            }
            Mode::Malformed(every) if n % every == 0 => {
                match MALFORMED[(n / every - 1) % MALFORMED.len()] {
                    "not json" => "not json".to_string(),
                    "four" => reply(json!("four")),
                    "7" => reply(json!(7)),
                    _ => reply(json!(2.5)),
                }
            }
            Mode::Stall(every) if n % every == 0 => continue,
            Mode::Crash(after) if i >= *after => return Ok(()),
            _ => reply(json!(4)),
        };
        writeln!(out, "{resp}")?;
        out.flush()?;
    }
    Ok(())
}
