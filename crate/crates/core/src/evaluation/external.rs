//! Client side of the trainer wire protocol.
//!
//! Records are single-line JSON objects exchanged over the trainer's standard
//! input and output:
//!
//! ```text
//! -> {"type":"hello","protocol":1}
//! <- {"type":"hello","protocol":1}
//! -> {"type":"evaluate","id":"<genome id>","nc":[...],"rc":[...],"network":{...},
//!     "epochs":3,"resume":true,"checkpoint_id":"<handle or null>"}
//! <- {"type":"result","id":"<genome id>","val_error":0.31,"epochs_trained":3,"checkpoint_id":"<handle>"}
//! <- {"type":"error","id":"<genome id>","message":"..."}
//! ```
//!
//! `id` is the 16-digit hexadecimal genome id. A response whose id does not
//! match the outstanding request triggers one resend; a second mismatch is a
//! protocol error.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use log::warn;
use serde::Serialize;
use serde_json::Value;

use super::{EvalRequest, Evaluator, TrainReport};
use crate::decoder::NetworkSpec;
use crate::error::{Error, Result};
use crate::genome::GenomeId;

pub const PROTOCOL_VERSION: u64 = 1;

/// Default per-request timeout: one hour.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Serialize)]
struct Hello {
    #[serde(rename = "type")]
    kind: &'static str,
    protocol: u64,
}

#[derive(Serialize)]
struct EvaluateRecord<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    id: String,
    nc: &'a [u8],
    rc: &'a [u8],
    network: &'a NetworkSpec,
    epochs: u32,
    resume: bool,
    checkpoint_id: Option<&'a str>,
}

enum Incoming {
    Line(String),
    Closed,
    Failed(std::io::Error),
}

pub struct ExternalEvaluator {
    command: String,
    writer: Box<dyn Write + Send>,
    lines: Receiver<Incoming>,
    child: Option<Child>,
    timeout: Duration,
    broken: bool,
}

impl ExternalEvaluator {
    /// Starts `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        // own process group, so a timeout can stop the shell and its children
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = cmd.spawn().map_err(|e| Error::io(command, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut ev = Self::connect(command, BufReader::new(stdout), stdin, timeout);
        ev.child = Some(child);
        ev.handshake()?;
        Ok(ev)
    }

    /// Wraps already-open streams and performs the handshake.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut ev = Self::connect("<streams>", reader, writer, timeout);
        ev.handshake()?;
        Ok(ev)
    }

    fn connect<R, W>(command: &str, reader: R, writer: W, timeout: Duration) -> Self
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let msg = match line {
                    Ok(l) => Incoming::Line(l),
                    Err(e) => Incoming::Failed(e),
                };
                if tx.send(msg).is_err() {
                    return;
                }
            }
            let _ = tx.send(Incoming::Closed);
        });
        ExternalEvaluator {
            command: command.to_string(),
            writer: Box::new(writer),
            lines: rx,
            child: None,
            timeout,
            broken: false,
        }
    }

    fn send<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Protocol(format!("cannot write to trainer: {e}")))
    }

    fn receive(&mut self, genome: Option<GenomeId>) -> Result<Value> {
        loop {
            let msg = match self.lines.recv_timeout(self.timeout) {
                Ok(m) => m,
                Err(RecvTimeoutError::Timeout) => {
                    self.broken = true;
                    if let Some(child) = self.child.as_mut() {
                        terminate(child);
                    }
                    return Err(match genome {
                        Some(genome) => Error::Timeout {
                            genome,
                            seconds: self.timeout.as_secs(),
                        },
                        None => Error::Protocol("trainer did not answer the handshake".into()),
                    });
                }
                Err(RecvTimeoutError::Disconnected) => Incoming::Closed,
            };
            match msg {
                Incoming::Line(l) if l.trim().is_empty() => continue,
                Incoming::Line(l) => {
                    return serde_json::from_str(&l)
                        .map_err(|e| Error::Protocol(format!("unparseable record {l:?}: {e}")))
                }
                Incoming::Failed(e) => {
                    self.broken = true;
                    return Err(Error::Protocol(format!("cannot read from trainer: {e}")));
                }
                Incoming::Closed => {
                    self.broken = true;
                    let status = self
                        .child
                        .as_mut()
                        .and_then(|c| c.wait().ok())
                        .map(|s| s.to_string())
                        .unwrap_or_else(|| "unknown status".into());
                    let message = format!("trainer `{}` exited ({status})", self.command);
                    return Err(match genome {
                        Some(genome) => Error::Evaluation { genome, message },
                        None => Error::Protocol(message),
                    });
                }
            }
        }
    }

    fn handshake(&mut self) -> Result<()> {
        self.send(&Hello {
            kind: "hello",
            protocol: PROTOCOL_VERSION,
        })?;
        let reply = self.receive(None)?;
        if field_str(&reply, "type")? != "hello" {
            return Err(Error::Protocol(format!("expected hello, got {reply}")));
        }
        let version = reply
            .get("protocol")
            .and_then(Value::as_u64)
            .ok_or_else(|| missing("protocol"))?;
        if version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "trainer speaks protocol {version}, expected {PROTOCOL_VERSION}"
            )));
        }
        Ok(())
    }

    fn exchange(&mut self, req: &EvalRequest) -> Result<Value> {
        let id = req.genome_id.to_string();
        let record = EvaluateRecord {
            kind: "evaluate",
            id: id.clone(),
            nc: &req.nc,
            rc: &req.rc,
            network: &req.network,
            epochs: req.epochs,
            resume: req.resume,
            checkpoint_id: req.checkpoint_id.as_deref(),
        };
        for attempt in 0..2 {
            self.send(&record)?;
            let reply = self.receive(Some(req.genome_id))?;
            let got = field_str(&reply, "id")?;
            if got == id {
                return Ok(reply);
            }
            if attempt == 0 {
                warn!("trainer answered id {got} for request {id}; resending");
            } else {
                return Err(Error::Protocol(format!(
                    "response id {got} does not match request id {id}"
                )));
            }
        }
        unreachable!()
    }
}

fn missing(field: &str) -> Error {
    Error::Protocol(format!("response missing field `{field}`"))
}

fn field_str<'a>(v: &'a Value, field: &str) -> Result<&'a str> {
    v.get(field).and_then(Value::as_str).ok_or_else(|| missing(field))
}

/// Parses a `result` or `error` record answering a request for `genome`.
pub fn parse_response(genome: GenomeId, v: &Value) -> Result<TrainReport> {
    match field_str(v, "type")? {
        "result" => {
            let val_error = v
                .get("val_error")
                .and_then(Value::as_f64)
                .ok_or_else(|| missing("val_error"))?;
            let epochs_trained = v
                .get("epochs_trained")
                .and_then(Value::as_u64)
                .and_then(|e| u32::try_from(e).ok())
                .ok_or_else(|| missing("epochs_trained"))?;
            let checkpoint_id = field_str(v, "checkpoint_id")?.to_string();
            Ok(TrainReport {
                val_error,
                epochs_trained,
                checkpoint_id,
            })
        }
        "error" => Err(Error::Evaluation {
            genome,
            message: field_str(v, "message").unwrap_or("unspecified trainer error").to_string(),
        }),
        other => Err(Error::Protocol(format!("unexpected record type {other:?}"))),
    }
}

impl Evaluator for ExternalEvaluator {
    fn train(&mut self, req: &EvalRequest) -> Result<TrainReport> {
        if self.broken {
            return Err(Error::Evaluation {
                genome: req.genome_id,
                message: format!("trainer `{}` is no longer usable", self.command),
            });
        }
        let reply = self.exchange(req)?;
        parse_response(req.genome_id, &reply)
    }

    fn describe(&self) -> String {
        format!("exec:{}", self.command)
    }
}

fn terminate(child: &mut Child) {
    #[cfg(unix)]
    {
        let _ = Command::new("kill")
            .arg("-KILL")
            .arg("--")
            .arg(format!("-{}", child.id()))
            .stderr(Stdio::null())
            .status();
    }
    let _ = child.kill();
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // closing stdin asks the trainer to exit
            self.writer = Box::new(std::io::sink());
            if child.try_wait().ok().flatten().is_none() {
                thread::sleep(Duration::from_millis(20));
                if child.try_wait().ok().flatten().is_none() {
                    terminate(&mut child);
                }
            }
            let _ = child.wait();
        }
    }
}
