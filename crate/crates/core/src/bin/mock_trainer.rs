//! Scriptable stand-in for an external trainer, used by protocol tests.
//!
//! Usage: `mfenas-mock-trainer [--error X] [--fault MODE] [--ledger PATH]`
//!
//! Without `--error` the reported validation error is `1 / (1 + epochs)`.
//! Fault modes: `missing-field`, `wrong-id`, `wrong-id-once`, `error-record`,
//! `crash`, `hang`, `bad-hello`. With `--ledger` every evaluation appends
//! `id,from,to` to the file.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use serde_json::{json, Value};

struct Options {
    error: Option<f64>,
    fault: Option<String>,
    ledger: Option<String>,
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options {
        error: None,
        fault: None,
        ledger: None,
    };
    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let value = args.next().ok_or_else(|| format!("{flag} needs a value"))?;
        match flag.as_str() {
            "--error" => opts.error = Some(value.parse().map_err(|_| format!("bad --error {value}"))?),
            "--fault" => opts.fault = Some(value),
            "--ledger" => opts.ledger = Some(value),
            _ => return Err(format!("unknown flag {flag}")),
        }
    }
    Ok(opts)
}

fn send(out: &mut impl Write, v: &Value) -> io::Result<()> {
    writeln!(out, "{v}")?;
    out.flush()
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("mfenas-mock-trainer: {e}");
            return ExitCode::from(2);
        }
    };
    let fault = opts.fault.as_deref().unwrap_or("");
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    // checkpoint handle -> epochs trained
    let mut checkpoints: HashMap<String, u64> = HashMap::new();
    let mut mismatches_sent = 0;

    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                let _ = send(&mut out, &json!({"type": "error", "id": null, "message": format!("malformed record: {e}")}));
                continue;
            }
        };
        let reply = match req["type"].as_str() {
            Some("hello") if fault == "bad-hello" => json!({"type": "hello", "protocol": 99}),
            Some("hello") => json!({"type": "hello", "protocol": 1}),
            Some("evaluate") => {
                match fault {
                    "crash" => return ExitCode::from(1),
                    "hang" => loop {
                        std::thread::sleep(std::time::Duration::from_secs(60));
                    },
                    _ => {}
                }
                evaluate(&req, &opts, fault, &mut checkpoints, &mut mismatches_sent)
            }
            _ => json!({"type": "error", "id": req["id"], "message": "unknown record type"}),
        };
        if send(&mut out, &reply).is_err() {
            break;
        }
    }
    ExitCode::SUCCESS
}

fn evaluate(
    req: &Value,
    opts: &Options,
    fault: &str,
    checkpoints: &mut HashMap<String, u64>,
    mismatches_sent: &mut u32,
) -> Value {
    let id = req["id"].as_str().unwrap_or("").to_string();
    let Some(epochs) = req["epochs"].as_u64().filter(|&e| e >= 1) else {
        return json!({"type": "error", "id": id, "message": "field `epochs` missing or < 1"});
    };
    if fault == "error-record" {
        return json!({"type": "error", "id": id, "message": "injected failure"});
    }
    let resume = req["resume"].as_bool().unwrap_or(false);
    let from = if resume {
        let handle = req["checkpoint_id"].as_str().unwrap_or("");
        match checkpoints.get(handle) {
            Some(&trained) if trained < epochs => trained,
            Some(&trained) => {
                return json!({"type": "error", "id": id, "message": format!("checkpoint has {trained} epochs, {epochs} requested")})
            }
            None => return json!({"type": "error", "id": id, "message": format!("unknown checkpoint {handle:?}")}),
        }
    } else {
        0
    };
    let handle = format!("mock-{id}");
    checkpoints.insert(handle.clone(), epochs);
    if let Some(path) = &opts.ledger {
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{id},{from},{epochs}");
        }
    }
    let val_error = opts.error.unwrap_or(1.0 / (1.0 + epochs as f64));
    let reply_id = match fault {
        "wrong-id" => "ffffffffffffffff".to_string(),
        "wrong-id-once" if *mismatches_sent == 0 => {
            *mismatches_sent += 1;
            "ffffffffffffffff".to_string()
        }
        _ => id,
    };
    if fault == "missing-field" {
        return json!({"type": "result", "id": reply_id, "epochs_trained": epochs, "checkpoint_id": handle});
    }
    json!({"type": "result", "id": reply_id, "val_error": val_error, "epochs_trained": epochs, "checkpoint_id": handle})
}
