//! Line-delimited protocol for scorers running as subprocesses.
//!
//! For each batch the scorer command is started, fed one request per line on
//! stdin, and stdin is closed. Requests look like
//!
//! ```text
//! <request_id>\t<item_id_vec0>\t<item_id_vec1>\t<features_vec0_csv>\t<features_vec1_csv>\n
//! ```
//!
//! and the scorer answers with one `<request_id>\t<score>\n` line per request,
//! in any order. Replies are reassembled by request id.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use super::Objective;
use crate::error::{Error, Result};
use crate::space::{Candidate, ProductSpace};

pub struct ExternalScorer {
    command: String,
    timeout: Duration,
}

impl ExternalScorer {
    /// `command` is run through `sh -c`.
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        Self {
            command: command.into(),
            timeout,
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

pub fn format_request(request_id: usize, space: &ProductSpace, candidate: &Candidate) -> String {
    let mut line = request_id.to_string();
    for (v, i) in candidate.indices().enumerate() {
        line.push('\t');
        line.push_str(space.set(v).id(i));
    }
    for (v, i) in candidate.indices().enumerate() {
        line.push('\t');
        for (k, x) in space.set(v).features(i).iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            let _ = write!(line, "{x}");
        }
    }
    line.push('\n');
    line
}

pub fn parse_response(line: &str) -> Result<(usize, f64)> {
    let malformed = |reason: &str| Error::ScorerMalformed {
        line: line.to_string(),
        reason: reason.to_string(),
    };
    let mut fields = line.trim_end_matches(['\r', '\n']).split('\t');
    let id = fields
        .next()
        .ok_or_else(|| malformed("missing request id"))?
        .trim()
        .parse::<usize>()
        .map_err(|_| malformed("request id is not an unsigned integer"))?;
    let score = fields
        .next()
        .ok_or_else(|| malformed("missing score"))?
        .trim()
        .parse::<f64>()
        .map_err(|_| malformed("score is not a decimal number"))?;
    if fields.next().is_some() {
        return Err(malformed("expected exactly two tab-separated fields"));
    }
    if !score.is_finite() {
        return Err(malformed("score is not finite"));
    }
    Ok((id, score))
}

impl Objective for ExternalScorer {
    fn describe(&self) -> String {
        format!("external({})", self.command)
    }

    fn score_batch(&self, space: &ProductSpace, candidates: &[Candidate]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let mut payload = String::new();
        for (id, c) in candidates.iter().enumerate() {
            space.check(c)?;
            payload.push_str(&format_request(id, space, c));
        }

        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Objective(format!("cannot start scorer {:?}: {e}", self.command)))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            // A scorer that exits early closes the pipe; that shows up as a
            // count mismatch on the reading side.
            let _ = stdin.write_all(payload.as_bytes());
        });

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let lines: std::io::Result<Vec<String>> = BufReader::new(stdout).lines().collect();
            let _ = tx.send(lines);
        });

        let lines = match rx.recv_timeout(self.timeout) {
            Ok(lines) => lines?,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::ScorerTimeout(self.timeout.as_secs_f64()));
            }
        };
        let _ = writer.join();
        let status = child.wait()?;

        let lines: Vec<&String> = lines.iter().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != candidates.len() {
            return Err(Error::ScorerCountMismatch {
                expected: candidates.len(),
                got: lines.len(),
            });
        }
        if !status.success() {
            return Err(Error::Objective(format!("scorer exited with {status}")));
        }
        let mut scores: Vec<Option<f64>> = vec![None; candidates.len()];
        for line in lines {
            let (id, score) = parse_response(line)?;
            let slot = scores.get_mut(id).ok_or_else(|| Error::ScorerMalformed {
                line: line.clone(),
                reason: format!("unknown request id {id}"),
            })?;
            if slot.replace(score).is_some() {
                return Err(Error::ScorerMalformed {
                    line: line.clone(),
                    reason: format!("duplicate reply for request {id}"),
                });
            }
        }
        Ok(scores.into_iter().map(|s| s.expect("all ids answered")).collect())
    }
}
