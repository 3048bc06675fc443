//! Question generator backed by an external worker process.
//!
//! The worker reads one JSON request per line on stdin and answers with one
//! JSON line on stdout:
//!
//! ```text
//! {"op":"train","pairs":[[input,question],...],"config":{...},"checkpoint":path}
//! {"op":"load","checkpoint":path}
//! {"op":"generate","input":text,"beam":k}
//! ```
//!
//! Replies are `{"ok":true,...}` or `{"ok":false,"error":message}`; a
//! generate reply carries `"candidates":[{"question":..,"score":..}]`.
//! `scripts/t5_worker.py` implements the protocol with a pretrained T5.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::{json, Value};
use sqlaug_core::synthesis::{QuestionGenerator, ScoredQuestion};
use sqlaug_core::{Error, Result};

use crate::generator::GeneratorTrainConfig;

const STAGE: &str = "external generator";

struct Worker {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ExternalGenerator {
    worker: Mutex<Worker>,
}

#[derive(Deserialize)]
struct Reply {
    ok: bool,
    #[serde(default)]
    error: Option<String>,
    #[serde(default)]
    candidates: Vec<ScoredQuestion>,
}

fn err(e: impl std::fmt::Display) -> Error {
    Error::component(STAGE, e)
}

impl ExternalGenerator {
    /// Starts `program args...` as a worker.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| err(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| err("no stdin"))?;
        let stdout = BufReader::new(child.stdout.take().ok_or_else(|| err("no stdout"))?);
        Ok(ExternalGenerator {
            worker: Mutex::new(Worker { child, stdin, stdout }),
        })
    }

    fn call(&self, request: Value) -> Result<Reply> {
        let mut w = self.worker.lock().map_err(|_| err("worker lock poisoned"))?;
        writeln!(w.stdin, "{request}").map_err(err)?;
        w.stdin.flush().map_err(err)?;
        let mut line = String::new();
        if w.stdout.read_line(&mut line).map_err(err)? == 0 {
            return Err(err("worker closed its output"));
        }
        let reply: Reply = serde_json::from_str(&line).map_err(|e| err(format!("bad reply `{}`: {e}", line.trim())))?;
        if !reply.ok {
            return Err(err(reply.error.clone().unwrap_or_else(|| "unspecified failure".into())));
        }
        Ok(reply)
    }

    pub fn train(&self, pairs: &[(String, String)], config: &GeneratorTrainConfig, checkpoint: &Path) -> Result<()> {
        config.validate()?;
        self.call(json!({
            "op": "train",
            "pairs": pairs,
            "config": {
                "learning_rate": config.learning_rate,
                "batch_size": config.batch_size,
                "epochs": config.epochs,
                "clip": config.clip,
                "warmup_steps": config.warmup_steps,
                "seed": config.seed,
            },
            "checkpoint": checkpoint,
        }))?;
        Ok(())
    }

    pub fn load(&self, checkpoint: &Path) -> Result<()> {
        self.call(json!({"op": "load", "checkpoint": checkpoint}))?;
        Ok(())
    }
}

impl QuestionGenerator for ExternalGenerator {
    /// Worker output is normalized to the generator contract: empty
    /// questions and repeats dropped, sorted by score, at most `beam` kept.
    fn generate(&self, input: &str, beam: usize) -> Result<Vec<ScoredQuestion>> {
        if beam == 0 {
            return Err(Error::InvalidArgument("beam size must be at least 1".into()));
        }
        let mut out = self
            .call(json!({"op": "generate", "input": input, "beam": beam}))?
            .candidates;
        out.retain(|c| !c.question.trim().is_empty() && c.score.is_finite());
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.question.cmp(&b.question)));
        let mut seen = BTreeSet::new();
        out.retain(|c| seen.insert(c.question.clone()));
        out.truncate(beam);
        Ok(out)
    }
}

impl Drop for ExternalGenerator {
    fn drop(&mut self) {
        if let Ok(w) = self.worker.get_mut() {
            let _ = w.child.kill();
            let _ = w.child.wait();
        }
    }
}
