//! Reference JSON-lines logit provider for protocol tests.
//!
//! Usage: `echo-provider [VOCAB_SIZE] [--fault KIND]`
//!
//! With `--fault`, the first response is deliberately broken:
//! `wrong-id`, `short`, `null`, `garbage` or `eof`.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use tokensteer::decoder::LogitProvider;
use tokensteer::provider::{serve, EchoProvider, Handshake, Request, Response};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut size = 5;
    let mut fault = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--fault" => fault = it.next().cloned(),
            n => match n.parse() {
                Ok(v) => size = v,
                Err(_) => {
                    eprintln!("echo-provider: unexpected argument {n:?}");
                    return ExitCode::from(2);
                }
            },
        }
    }
    let echo = EchoProvider::new(size);
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    let result = match fault {
        None => serve(&echo, stdin, stdout),
        Some(kind) => faulty(&echo, &kind, stdin, stdout).map_err(|e| tokensteer::Error::Protocol(e.to_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echo-provider: {e}");
            ExitCode::FAILURE
        }
    }
}

fn faulty(echo: &EchoProvider, kind: &str, stdin: impl BufRead, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(&Handshake::from_vocab(echo.vocab()))?)?;
    out.flush()?;
    let Some(line) = stdin.lines().next() else {
        return Ok(());
    };
    let req: Request = serde_json::from_str(&line?)?;
    let seq = req.slots().map_err(io::Error::other)?;
    let mut logits = echo.logits(&seq, &req.positions).map_err(io::Error::other)?;
    let text = match kind {
        "wrong-id" => serde_json::to_string(&Response { id: req.id + 1, logits })?,
        "short" => {
            for row in &mut logits {
                row.pop();
            }
            serde_json::to_string(&Response { id: req.id, logits })?
        }
        "null" => format!("{{\"id\": {}, \"logits\": [[null]]}}", req.id),
        "garbage" => "}{".to_string(),
        "eof" => return Ok(()),
        other => return Err(io::Error::other(format!("unknown fault {other}"))),
    };
    writeln!(out, "{text}")?;
    out.flush()
}
