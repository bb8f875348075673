//! JSON-lines logit-provider protocol over a pair of byte streams.
//!
//! The provider speaks first with a handshake record:
//!
//! ```text
//! {"vocab": ["tok0", "tok1", ...], "special": {"mask": 0, "eos": 1, "pad": 2}}
//! ```
//!
//! after which the client sends one request per line and reads one response:
//!
//! ```text
//! -> {"id": 7, "seq": [12, 5, -1, -1], "positions": [2, 3]}
//! <- {"id": 7, "logits": [[...], [...]]}
//! ```
//!
//! `-1` marks a masked slot. Any malformed or mismatched response is a
//! protocol error.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{SpecialKind, Vocab};
use crate::decoder::LogitProvider;
use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eos: Option<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pad: Option<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub vocab: Vec<String>,
    #[serde(default)]
    pub special: SpecialIds,
}

impl Handshake {
    pub fn from_vocab(vocab: &Vocab) -> Self {
        Self {
            vocab: vocab.tokens().to_vec(),
            special: SpecialIds {
                mask: vocab.special(SpecialKind::Mask),
                eos: vocab.special(SpecialKind::Eos),
                pad: vocab.special(SpecialKind::Pad),
            },
        }
    }

    pub fn to_vocab(&self) -> Result<Vocab> {
        let mut vocab = Vocab::from_tokens(self.vocab.iter().cloned())
            .map_err(|e| Error::Protocol(format!("handshake vocabulary: {e}")))?;
        for (kind, id) in [
            (SpecialKind::Mask, self.special.mask),
            (SpecialKind::Eos, self.special.eos),
            (SpecialKind::Pad, self.special.pad),
        ] {
            if let Some(id) = id {
                vocab
                    .set_special(kind, id)
                    .map_err(|e| Error::Protocol(format!("handshake special ids: {e}")))?;
            }
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub seq: Vec<i64>,
    pub positions: Vec<usize>,
}

impl Request {
    pub fn new(id: u64, seq: &[Option<TokenId>], positions: &[usize]) -> Self {
        Self {
            id,
            seq: seq.iter().map(|s| s.map_or(-1, i64::from)).collect(),
            positions: positions.to_vec(),
        }
    }

    /// Decode `seq` back into slots; ids below -1 are rejected.
    pub fn slots(&self) -> Result<Vec<Option<TokenId>>> {
        self.seq
            .iter()
            .map(|&x| match x {
                -1 => Ok(None),
                x if x >= 0 && x <= i64::from(TokenId::MAX) => Ok(Some(x as TokenId)),
                x => Err(Error::Protocol(format!("invalid sequence entry {x}"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub logits: Vec<Vec<f64>>,
}

struct Channel<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
    line: String,
}

impl<R: BufRead, W: Write> Channel<R, W> {
    fn read_line(&mut self, what: &str) -> Result<&str> {
        self.line.clear();
        let n = self
            .reader
            .read_line(&mut self.line)
            .map_err(|e| Error::Protocol(format!("reading {what}: {e}")))?;
        if n == 0 {
            return Err(Error::Protocol(format!("provider closed the stream before sending {what}")));
        }
        Ok(self.line.trim_end())
    }
}

/// Client side of the protocol over arbitrary streams.
pub struct JsonLinesProvider<R, W> {
    vocab: Vocab,
    channel: Mutex<Channel<R, W>>,
}

impl<R: BufRead, W: Write> JsonLinesProvider<R, W> {
    /// Read the handshake and return a ready client.
    pub fn connect(reader: R, writer: W) -> Result<Self> {
        let mut channel = Channel {
            reader,
            writer,
            next_id: 0,
            line: String::new(),
        };
        let line = channel.read_line("handshake")?;
        let handshake: Handshake =
            serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad handshake: {e}")))?;
        if handshake.vocab.is_empty() {
            return Err(Error::Protocol("handshake declares an empty vocabulary".into()));
        }
        Ok(Self {
            vocab: handshake.to_vocab()?,
            channel: Mutex::new(channel),
        })
    }
}

impl<R: BufRead, W: Write> LogitProvider for JsonLinesProvider<R, W> {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logits(&self, seq: &[Option<TokenId>], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| Error::Protocol("provider channel poisoned by an earlier panic".into()))?;
        let id = ch.next_id;
        ch.next_id += 1;
        let request = Request::new(id, seq, positions);
        let mut line = serde_json::to_string(&request).map_err(|e| Error::Protocol(e.to_string()))?;
        line.push('\n');
        ch.writer
            .write_all(line.as_bytes())
            .and_then(|_| ch.writer.flush())
            .map_err(|e| Error::Protocol(format!("writing request {id}: {e}")))?;

        let text = ch.read_line("a response")?;
        let response: Response = serde_json::from_str(text)
            .map_err(|e| Error::Protocol(format!("malformed response to request {id}: {e}")))?;
        if response.id != id {
            return Err(Error::Protocol(format!("response id {} does not match request {id}", response.id)));
        }
        if response.logits.len() != positions.len() {
            return Err(Error::Protocol(format!(
                "request {id} asked for {} positions, response has {} vectors",
                positions.len(),
                response.logits.len()
            )));
        }
        let width = self.vocab.len();
        for (i, row) in response.logits.iter().enumerate() {
            if row.len() != width {
                return Err(Error::Protocol(format!(
                    "request {id}, vector {i}: length {} but vocabulary has {width}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Protocol(format!("request {id}, vector {i}: non-finite logit")));
            }
        }
        Ok(response.logits)
    }
}

/// An external provider process speaking the protocol on stdin/stdout.
pub struct SubprocessProvider {
    inner: JsonLinesProvider<BufReader<ChildStdout>, ChildStdin>,
    child: Child,
}

impl SubprocessProvider {
    /// Spawn `program args...` and perform the handshake.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(program, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match JsonLinesProvider::connect(BufReader::new(stdout), stdin) {
            Ok(inner) => Ok(Self { inner, child }),
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// Split a shell-free command line on whitespace and spawn it.
    pub fn spawn_command_line(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::Param("empty provider command".into()))?;
        let args: Vec<String> = parts.collect();
        Self::spawn(&program, &args)
    }
}

impl LogitProvider for SubprocessProvider {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn logits(&self, seq: &[Option<TokenId>], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.inner.logits(seq, positions)
    }
}

impl Drop for SubprocessProvider {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Server side: send the handshake, then answer requests until EOF.
pub fn serve<P, R, W>(provider: &P, reader: R, mut writer: W) -> Result<()>
where
    P: LogitProvider + ?Sized,
    R: BufRead,
    W: Write,
{
    let io_err = |e: std::io::Error| Error::Protocol(e.to_string());
    let handshake = Handshake::from_vocab(provider.vocab());
    writeln!(writer, "{}", serde_json::to_string(&handshake).map_err(|e| Error::Protocol(e.to_string()))?)
        .map_err(io_err)?;
    writer.flush().map_err(io_err)?;
    for line in reader.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request =
            serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("bad request: {e}")))?;
        let seq = req.slots()?;
        if let Some(&p) = req.positions.iter().find(|&&p| p >= seq.len()) {
            return Err(Error::Protocol(format!("position {p} beyond sequence of {}", seq.len())));
        }
        let logits = provider.logits(&seq, &req.positions)?;
        let resp = Response { id: req.id, logits };
        writeln!(writer, "{}", serde_json::to_string(&resp).map_err(|e| Error::Protocol(e.to_string()))?)
            .map_err(io_err)?;
        writer.flush().map_err(io_err)?;
    }
    Ok(())
}

/// Reference provider whose logits are a fixed arithmetic function of the
/// left neighbour slot and the position. Used to exercise the protocol.
#[derive(Debug, Clone)]
pub struct EchoProvider {
    vocab: Vocab,
}

impl EchoProvider {
    /// `<mask>`, `<eos>`, `<pad>` followed by `n` ordinary tokens `t0..`.
    pub fn new(n: usize) -> Self {
        let tokens = ["<mask>", "<eos>", "<pad>"]
            .into_iter()
            .map(String::from)
            .chain((0..n).map(|i| format!("t{i}")));
        let mut vocab = Vocab::from_tokens(tokens).expect("distinct tokens");
        vocab.set_special(SpecialKind::Mask, 0).expect("in range");
        vocab.set_special(SpecialKind::Eos, 1).expect("in range");
        vocab.set_special(SpecialKind::Pad, 2).expect("in range");
        Self { vocab }
    }

    pub fn logits_at(&self, seq: &[Option<TokenId>], position: usize) -> Vec<f64> {
        let left = match position.checked_sub(1).and_then(|i| seq.get(i)) {
            Some(Some(t)) => i64::from(*t),
            _ => -1,
        };
        (0..self.vocab.len() as i64)
            .map(|v| {
                if v == 0 || v == 2 {
                    -10.0
                } else {
                    ((left + 2) * 7 + v * 3 + position as i64 * 5).rem_euclid(11) as f64 / 4.0
                }
            })
            .collect()
    }
}

impl LogitProvider for EchoProvider {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn logits(&self, seq: &[Option<TokenId>], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(positions.iter().map(|&p| self.logits_at(seq, p)).collect())
    }
}
