//! Text-policy wire protocol: line-delimited JSON over a bidirectional byte
//! stream.
//!
//! Requests are `{"id": string, "prompt": string}`, responses
//! `{"id": string, "text": string}`, one response per request. Responses
//! with unknown ids are ignored with a warning. Works over TCP or a child
//! process's standard streams.

use crate::error::WireError;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

/// Default per-request timeout in seconds.
pub const DEFAULT_TIMEOUT_S: f64 = 10.0;

#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    pub text: String,
}

/// Client half of the wire protocol.
pub struct TextPolicyClient {
    writer: Box<dyn Write + Send>,
    responses: mpsc::Receiver<WireResponse>,
    timeout: Duration,
    // Keeps a spawned backend alive for the client's lifetime.
    _child: Option<Child>,
}

impl TextPolicyClient {
    /// Build a client over arbitrary reader/writer halves.
    pub fn from_stream<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: std::io::Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let buf = BufReader::new(reader);
            for line in buf.lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(_) => break,
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<WireResponse>(&line) {
                    Ok(resp) => {
                        if tx.send(resp).is_err() {
                            break;
                        }
                    }
                    Err(e) => log::warn!("wire: dropping malformed response line: {e}"),
                }
            }
        });
        TextPolicyClient {
            writer: Box::new(writer),
            responses: rx,
            timeout,
            _child: None,
        }
    }

    /// Connect to a text policy served over TCP.
    pub fn connect_tcp(addr: &str, timeout: Duration) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let reader = stream.try_clone()?;
        Ok(Self::from_stream(reader, stream, timeout))
    }

    /// Spawn `command` and speak the protocol over its standard streams.
    pub fn spawn_command(command: &mut Command, timeout: Duration) -> std::io::Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::from_stream(stdout, stdin, timeout);
        client._child = Some(child);
        Ok(client)
    }

    /// Send one prompt and wait for its response text.
    pub fn request(&mut self, id: &str, prompt: &str) -> Result<String, WireError> {
        let line = serde_json::to_string(&WireRequest {
            id: id.to_string(),
            prompt: prompt.to_string(),
        })
        .expect("request serializes");
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;

        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(WireError::Timeout {
                    id: id.to_string(),
                    timeout_s: self.timeout.as_secs_f64(),
                });
            }
            match self.responses.recv_timeout(remaining) {
                Ok(resp) if resp.id == id => return Ok(resp.text),
                Ok(resp) => log::warn!("wire: ignoring response for unknown id {:?}", resp.id),
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(WireError::Timeout {
                        id: id.to_string(),
                        timeout_s: self.timeout.as_secs_f64(),
                    })
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => return Err(WireError::Closed),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    /// Minimal scripted server: answers every request with `reply(prompt)`.
    fn serve_tcp<F>(reply: F) -> String
    where
        F: Fn(&str) -> Option<String> + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut out = stream.try_clone().unwrap();
            let reader = BufReader::new(stream);
            for line in reader.lines() {
                let line = match line {
                    Ok(l) => l,
                    Err(_) => break,
                };
                let req: WireRequest = serde_json::from_str(&line).unwrap();
                if let Some(text) = reply(&req.prompt) {
                    let resp = WireResponse { id: req.id, text };
                    let mut payload = serde_json::to_string(&resp).unwrap();
                    payload.push('\n');
                    if out.write_all(payload.as_bytes()).is_err() {
                        break;
                    }
                }
            }
        });
        addr
    }

    #[test]
    fn round_trips_one_request_per_response() {
        let addr = serve_tcp(|prompt| Some(format!("echo: {prompt}")));
        let mut client =
            TextPolicyClient::connect_tcp(&addr, Duration::from_secs(2)).unwrap();
        assert_eq!(client.request("1", "hello").unwrap(), "echo: hello");
        assert_eq!(client.request("2", "again").unwrap(), "echo: again");
    }

    #[test]
    fn times_out_when_server_stays_silent() {
        let addr = serve_tcp(|_| None);
        let mut client =
            TextPolicyClient::connect_tcp(&addr, Duration::from_millis(100)).unwrap();
        match client.request("1", "anyone there?") {
            Err(WireError::Timeout { id, .. }) => assert_eq!(id, "1"),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn unknown_ids_are_skipped_until_the_match_arrives() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut out = stream.try_clone().unwrap();
            let reader = BufReader::new(stream);
            for line in reader.lines() {
                let req: WireRequest = serde_json::from_str(&line.unwrap()).unwrap();
                // A stray response first, then the real one.
                out.write_all(b"{\"id\":\"stray\",\"text\":\"noise\"}\n").unwrap();
                let resp = WireResponse {
                    id: req.id,
                    text: "real".into(),
                };
                let mut payload = serde_json::to_string(&resp).unwrap();
                payload.push('\n');
                out.write_all(payload.as_bytes()).unwrap();
            }
        });
        let mut client =
            TextPolicyClient::connect_tcp(&addr, Duration::from_secs(2)).unwrap();
        assert_eq!(client.request("7", "x").unwrap(), "real");
    }
}
